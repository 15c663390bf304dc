//! State-evolution prediction wrapper and the matched empirical overlay:
//! Bernoulli-Gaussian signals, A_mn ~ N(0, 1/M), per-iteration MSE traces.

use quantamp_core::amp_solver::{init_prior_from_data, run_amp_pe, SolverOptions};
use quantamp_core::numerics::child_seed;
use quantamp_core::quantized_channel::{make_uniform_quantizer, NoisePrior, Quantizer};
use quantamp_core::signal_prior::SignalPrior;
use quantamp_core::state_evolution::{run_state_evolution, SeOptions, SeResult};
use rayon::prelude::*;

use crate::gen::{add_noise, calibrate_noise, gen_matrix, gen_signal, MatrixVariance, NonzeroDist};
use crate::runner::RunError;

/// Setting for a Fig.-4-style comparison: Bernoulli-Gaussian prior with
/// nonzero fraction `sparsity`, sign or mid-rise quantizer, pre-QNT SNR
/// target, sampling ratio β.
#[derive(Debug, Clone)]
pub struct SeComparison {
    pub n: usize,
    pub beta: f64,
    pub sparsity: f64,
    pub snr_db: f64,
    pub bits: u32,
    pub iters: usize,
    pub mc_samples: usize,
    pub trials: usize,
    pub seed: u64,
    pub estimate_params: bool,
}

impl SeComparison {
    pub fn truth_prior(&self) -> Result<SignalPrior, RunError> {
        Ok(SignalPrior::bernoulli_gaussian(self.sparsity, 1.0)?)
    }

    /// Ensemble noise variance hitting the SNR target: signal power of z is
    /// β⁻¹ν_x under the 1/M matrix scaling.
    pub fn gamma_w(&self) -> f64 {
        self.sparsity / self.beta * 10f64.powf(-self.snr_db / 10.0)
    }

    /// Quantizer calibrated from the ensemble std of z + w.
    pub fn quantizer(&self) -> Result<Quantizer, RunError> {
        if self.bits == 1 {
            return Ok(make_uniform_quantizer(1, 1.0)?);
        }
        let std = (self.sparsity / self.beta + self.gamma_w()).sqrt();
        let step = 2.0 * std * 2f64.powi(1 - self.bits as i32);
        Ok(make_uniform_quantizer(self.bits, step)?)
    }
}

/// Monte Carlo state-evolution prediction for the configured setting.
pub fn se_prediction(cfg: &SeComparison) -> Result<SeResult, RunError> {
    let prior = cfg.truth_prior()?;
    let qz = cfg.quantizer()?;
    let opts = SeOptions::new(cfg.beta, cfg.mc_samples, cfg.iters, child_seed(cfg.seed, 0x5345));
    run_state_evolution(&prior, &qz, cfg.gamma_w(), &opts, cfg.estimate_params)
        .map_err(|e| RunError::Solver(quantamp_core::amp_solver::SolverError::InvalidOptions(e.to_string())))
}

/// Empirical per-iteration MSE of AMP-PE across trials: (mean, std), rows
/// aligned with the prediction (row t = MSE of the iteration-t estimate).
pub fn se_empirical(cfg: &SeComparison) -> Result<(Vec<f64>, Vec<f64>), RunError> {
    let m = ((cfg.beta * cfg.n as f64).round() as usize).max(1);
    let traces: Vec<Result<Vec<f64>, RunError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let ts = child_seed(child_seed(cfg.seed, 0x454d50), trial as u64);
            let x = gen_signal(cfg.n, cfg.sparsity, NonzeroDist::Gaussian, child_seed(ts, 1))?;
            let op = gen_matrix(m, cfg.n, MatrixVariance::OneOverM, child_seed(ts, 2))?;
            let mut z = vec![0.0; m];
            use quantamp_core::linop::LinearOperator;
            op.forward(&x, &mut z);
            let gamma_w = calibrate_noise(&z, cfg.snr_db)?;
            let v = add_noise(&z, gamma_w, child_seed(ts, 3));
            let qz = cfg.quantizer()?;
            let y: Vec<usize> = v.iter().map(|&vi| qz.quantize(vi)).collect();
            let opts = SolverOptions {
                max_iters: cfg.iters,
                tol: 1e-13,
                estimate_lambda: cfg.estimate_params,
                estimate_theta: cfg.estimate_params,
                ..SolverOptions::default()
            };
            let (prior0, noise0) = if cfg.estimate_params {
                let y_dq: Vec<f64> = y.iter().map(|&c| qz.dequantize_midpoint(c)).collect();
                (
                    init_prior_from_data(&op, &y_dq, 2, child_seed(ts, 4))?,
                    NoisePrior::new(1e-6)?,
                )
            } else {
                (cfg.truth_prior()?, NoisePrior::new(gamma_w)?)
            };
            let res = run_amp_pe(&op, &y, &qz, &prior0, &noise0, &opts, Some(&x))?;
            let mut mses: Vec<f64> = res.trace.iter().map(|r| r.mse.unwrap()).collect();
            // pad early-converged runs so rows stay aligned
            while mses.len() < cfg.iters + 1 {
                mses.push(*mses.last().unwrap());
            }
            Ok(mses)
        })
        .collect();
    let traces: Vec<Vec<f64>> = traces.into_iter().collect::<Result<_, _>>()?;
    let rows = cfg.iters + 1;
    let mut mean = vec![0.0; rows];
    let mut std = vec![0.0; rows];
    for t in 0..rows {
        let vals: Vec<f64> = traces.iter().map(|tr| tr[t]).collect();
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[t] = mu;
        if vals.len() > 1 {
            std[t] = (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                / (vals.len() - 1) as f64)
                .sqrt();
        }
    }
    Ok((mean, std))
}
