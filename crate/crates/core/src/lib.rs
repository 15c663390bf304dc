//! Sparse signal recovery from heavily quantized measurements with
//! approximate message passing and built-in parameter estimation.
//!
//! The crate provides the Bernoulli–Gaussian-mixture input channel, the
//! 1-bit/multi-bit quantized output channel with pre-quantization Gaussian
//! noise, the AMP-PE outer loop with damping and interleaved EM /
//! second-order parameter estimation, and a Monte Carlo state-evolution
//! predictor for i.i.d. Gaussian measurement ensembles.

pub mod amp_solver;
pub mod linop;
pub mod numerics;
pub mod quantized_channel;
pub mod signal_prior;
pub mod state_evolution;

pub use amp_solver::{
    run_amp, run_amp_pe, AwgnOutput, OutputChannel, QuantizedOutput, SolverOptions, SolverResult,
};
pub use linop::{DenseOperator, LinearOperator};
pub use quantized_channel::{make_uniform_quantizer, NoisePrior, Quantizer};
pub use signal_prior::SignalPrior;
pub use state_evolution::{run_state_evolution, SeOptions, SeResult};
