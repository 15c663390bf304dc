//! Benchmark harness for sparse recovery from quantized measurements:
//! synthetic experiment generation, recovery metrics, QIHT and AMP-AWGN
//! baselines, sweep orchestration, state-evolution comparisons, and the
//! `quantamp` CLI.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod gen;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod se_compare;
pub mod selftest;

pub use config::{ExperimentConfig, Method, MethodOptions, SweepConfig};
pub use gen::{calibrate_noise, gen_matrix, gen_signal, MatrixVariance, NonzeroDist};
pub use metrics::nmse;
