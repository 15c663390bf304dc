//! Trial execution and sweep orchestration. Every trial derives its own
//! seed tree from (master seed, cell index, trial index), so results are
//! reproducible regardless of worker scheduling; the collector keeps rows
//! in (cell, trial) order.

use rayon::prelude::*;
use serde::Serialize;

use quantamp_core::amp_solver::{run_amp_pe, SolverError, SolverOptions};
use quantamp_core::linop::LinearOperator;
use quantamp_core::numerics::child_seed;
use quantamp_core::quantized_channel::NoisePrior;
use quantamp_core::signal_prior::SignalPrior;

use crate::baselines::{amp_awgn_baseline, qiht_baseline, AwgnBaselineOptions};
use crate::config::{ExperimentConfig, Method, SweepConfig};
use crate::gen::{
    add_noise, calibrate_noise, calibrated_quantizer, gen_matrix, gen_signal, GenError,
};
use crate::metrics::nmse;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Channel(#[from] quantamp_core::quantized_channel::ChannelError),
    #[error(transparent)]
    Prior(#[from] quantamp_core::signal_prior::PriorError),
}

/// Outcome of a single trial.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub nmse: f64,
    pub nmse_debiased: f64,
    pub iterations: usize,
    pub runtime_seconds: f64,
    pub lambda_hat: Option<SignalPrior>,
    pub gamma_w_hat: Option<f64>,
}

fn solver_options(cfg: &ExperimentConfig, estimate: bool) -> SolverOptions {
    SolverOptions {
        max_iters: cfg.opts.max_iters,
        tol: cfg.opts.tol,
        damping: cfg.opts.damping,
        inner_pe_iters: cfg.opts.inner_pe_iters,
        estimate_lambda: estimate,
        estimate_theta: estimate,
        damp_x: cfg.opts.damp_x,
    }
}

/// Runs one seeded trial of the configured method and scores it.
pub fn run_trial(cfg: &ExperimentConfig, trial_seed: u64) -> Result<TrialResult, RunError> {
    let n = cfg.n;
    let m = cfg.m();
    let x = gen_signal(n, cfg.sparsity, cfg.dist, child_seed(trial_seed, 1))?;
    let op = gen_matrix(m, n, cfg.matrix_variance, child_seed(trial_seed, 2))?;
    let mut z = vec![0.0; m];
    op.forward(&x, &mut z);
    let gamma_w = calibrate_noise(&z, cfg.pre_qnt_snr_db)?;
    let v = add_noise(&z, gamma_w, child_seed(trial_seed, 3));
    let quantizer = calibrated_quantizer(cfg.bits, &v)?;
    let y: Vec<usize> = v.iter().map(|&vi| quantizer.quantize(vi)).collect();
    let init_seed = child_seed(trial_seed, 4);

    let started = std::time::Instant::now();
    let (x_hat, iterations, lambda_hat, gamma_w_hat) = match cfg.method {
        Method::AmpPe => {
            let y_dq: Vec<f64> = y.iter().map(|&c| quantizer.dequantize_midpoint(c)).collect();
            let prior0 = quantamp_core::amp_solver::init_prior_from_data(
                &op,
                &y_dq,
                cfg.opts.i_components,
                init_seed,
            )?;
            let noise0 = NoisePrior::new(cfg.opts.gamma_w0)?;
            let res = run_amp_pe(
                &op,
                &y,
                &quantizer,
                &prior0,
                &noise0,
                &solver_options(cfg, true),
                Some(&x),
            )?;
            (res.x_hat, res.iterations, Some(res.lambda_hat), Some(res.theta_hat.gamma_w()))
        }
        Method::AmpOracle => {
            let prior = SignalPrior::bernoulli_gaussian(cfg.sparsity, 1.0)?;
            let noise = NoisePrior::new(gamma_w)?;
            let res = run_amp_pe(
                &op,
                &y,
                &quantizer,
                &prior,
                &noise,
                &solver_options(cfg, false),
                Some(&x),
            )?;
            (res.x_hat, res.iterations, None, None)
        }
        Method::AmpAwgn => {
            let opts = AwgnBaselineOptions {
                solver: solver_options(cfg, true),
                i_components: cfg.opts.i_components,
                gamma_w0: cfg.opts.gamma_w0,
                seed: init_seed,
            };
            let res = amp_awgn_baseline(&op, &y, &quantizer, &opts, Some(&x))?;
            (res.x_hat, res.iterations, Some(res.lambda_hat), Some(res.theta_hat.gamma_w()))
        }
        Method::Qiht => {
            let e = ((cfg.sparsity * n as f64).round() as usize).max(1);
            let step = cfg.opts.qiht_step.unwrap_or(n as f64 / op.frob_norm_sq());
            let xh = qiht_baseline(&op, &y, &quantizer, e, step, cfg.opts.qiht_iters);
            (xh, cfg.opts.qiht_iters, None, None)
        }
    };
    let runtime_seconds = started.elapsed().as_secs_f64();
    let (plain, debiased) = nmse(&x, &x_hat)?;
    Ok(TrialResult {
        nmse: plain,
        nmse_debiased: debiased,
        iterations,
        runtime_seconds,
        lambda_hat,
        gamma_w_hat,
    })
}

/// All trials of one cell, in trial order. `cell_tag` separates the seed
/// trees of different sweep cells.
pub fn run_cell(cfg: &ExperimentConfig, cell_tag: u64) -> Result<Vec<TrialResult>, RunError> {
    cfg.validate()?;
    let results: Vec<Result<TrialResult, RunError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = child_seed(child_seed(cfg.seed, cell_tag), t as u64);
            run_trial(cfg, trial_seed)
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub nmse_debiased_mean: f64,
    pub nmse_debiased_std: f64,
    pub iterations_mean: f64,
    pub runtime_seconds_mean: f64,
}

pub fn aggregate(trials: &[TrialResult]) -> Aggregate {
    let n = trials.len() as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(|t| f(t)).sum::<f64>() / n;
    let std = |f: &dyn Fn(&TrialResult) -> f64, mu: f64| {
        if trials.len() < 2 {
            0.0
        } else {
            (trials.iter().map(|t| (f(t) - mu) * (f(t) - mu)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let nm = mean(&|t| t.nmse);
    let nd = mean(&|t| t.nmse_debiased);
    Aggregate {
        nmse_mean: nm,
        nmse_std: std(&|t| t.nmse, nm),
        nmse_debiased_mean: nd,
        nmse_debiased_std: std(&|t| t.nmse_debiased, nd),
        iterations_mean: mean(&|t| t.iterations as f64),
        runtime_seconds_mean: mean(&|t| t.runtime_seconds),
    }
}

/// One sweep row: the cell coordinates plus aggregated scores.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub sampling_ratio: f64,
    pub snr_db: f64,
    pub method: Method,
    pub trials: usize,
    pub aggregate: Aggregate,
}

/// Runs the full grid; rows ordered by (method, snr, ratio).
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepCell>, RunError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        for (si, &snr) in cfg.snr_dbs.iter().enumerate() {
            for (ri, &ratio) in cfg.sampling_ratios.iter().enumerate() {
                let cell_cfg = cfg.cell(ri, si, mi);
                let tag = ((mi as u64) << 40) | ((si as u64) << 20) | ri as u64;
                let trials = run_cell(&cell_cfg, tag)?;
                cells.push(SweepCell {
                    sampling_ratio: ratio,
                    snr_db: snr,
                    method,
                    trials: trials.len(),
                    aggregate: aggregate(&trials),
                });
            }
        }
    }
    Ok(cells)
}

/// Caps the rayon worker pool from the `QUANTAMP_THREADS` environment
/// variable. Call once at process start; later calls are no-ops.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("QUANTAMP_THREADS") {
        if let Ok(k) = v.trim().parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}
