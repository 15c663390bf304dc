//! Comparison methods: quantized iterative hard thresholding and the
//! AMP baseline that treats dequantized symbols as Gaussian observations.

use quantamp_core::amp_solver::{
    init_prior_from_data, run_amp, AwgnOutput, SolverError, SolverOptions, SolverResult,
};
use quantamp_core::linop::LinearOperator;
use quantamp_core::quantized_channel::{NoisePrior, Quantizer};

/// Options for [`amp_awgn_baseline`]: the solver schedule plus the
/// mixture size and seed used by the k-means initializer.
#[derive(Debug, Clone)]
pub struct AwgnBaselineOptions {
    pub solver: SolverOptions,
    pub i_components: usize,
    pub gamma_w0: f64,
    pub seed: u64,
}

impl Default for AwgnBaselineOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), i_components: 2, gamma_w0: 1e-6, seed: 0 }
    }
}

/// AMP with a Gaussian output channel on midpoint-dequantized measurements
/// (symbols stand in for the midpoints of unbounded cells). The noise
/// variance of the surrogate channel is estimated by the same second-order
/// machinery applied to the Gaussian evidence.
pub fn amp_awgn_baseline<Op: LinearOperator + ?Sized>(
    op: &Op,
    y_symbols: &[usize],
    quantizer: &Quantizer,
    opts: &AwgnBaselineOptions,
    truth: Option<&[f64]>,
) -> Result<SolverResult, SolverError> {
    if y_symbols.iter().any(|&c| c >= quantizer.num_cells()) {
        return Err(SolverError::InvalidSymbols);
    }
    let y_dq: Vec<f64> = y_symbols
        .iter()
        .map(|&c| quantizer.dequantize_midpoint(c))
        .collect();
    let prior0 = init_prior_from_data(op, &y_dq, opts.i_components, opts.seed)?;
    let noise0 = NoisePrior::new(opts.gamma_w0)?;
    let channel = AwgnOutput::new(&y_dq);
    run_amp(op, &channel, &prior0, &noise0, &opts.solver, truth)
}

/// Iterative hard thresholding on the dequantized residual:
/// x ← H_E(x + step·Aᵀ(dequant(y) − Q_soft(Ax))), run for a fixed number of
/// iterations. `dequant` maps each observed symbol index to its symbol
/// value and `Q_soft` passes Ax through the quantizer's symbol map; H_E
/// keeps the E largest-magnitude entries, ties broken by lowest index.
pub fn qiht_baseline<Op: LinearOperator + ?Sized>(
    op: &Op,
    y_symbols: &[usize],
    quantizer: &Quantizer,
    sparsity_e: usize,
    step: f64,
    iters: usize,
) -> Vec<f64> {
    let (m, n) = op.dims();
    debug_assert_eq!(y_symbols.len(), m);
    let y_dq: Vec<f64> = y_symbols.iter().map(|&c| quantizer.symbol(c)).collect();
    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut resid = vec![0.0; m];
    let mut grad = vec![0.0; n];
    for _ in 0..iters {
        op.forward(&x, &mut ax);
        for i in 0..m {
            resid[i] = y_dq[i] - quantizer.symbol(quantizer.quantize(ax[i]));
        }
        op.adjoint(&resid, &mut grad);
        for i in 0..n {
            x[i] += step * grad[i];
        }
        hard_threshold(&mut x, sparsity_e);
    }
    x
}

/// Keeps the `e` largest-magnitude entries, zeroing the rest; ties broken
/// by lowest index.
pub fn hard_threshold(x: &mut [f64], e: usize) {
    if e >= x.len() {
        return;
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    for &i in &idx[e..] {
        x[i] = 0.0;
    }
}
