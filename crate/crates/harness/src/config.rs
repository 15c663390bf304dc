//! Experiment configuration: JSON-file schema shared by the `run` and
//! `sweep` subcommands. CLI flags override file values.

use serde::{Deserialize, Serialize};

use crate::gen::{MatrixVariance, NonzeroDist};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("sparsity must lie in (0,1], got {0}")]
    BadSparsity(f64),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("bits must be at least 1")]
    NoBits,
    #[error("n must be positive")]
    EmptyN,
    #[error("sampling ratio must be positive, got {0}")]
    BadRatio(f64),
    #[error("the oracle method needs gaussian nonzeros (no closed-form prior otherwise)")]
    OracleNeedsGaussian,
    #[error("sweep lists must be non-empty")]
    EmptySweepAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AmpPe,
    AmpOracle,
    AmpAwgn,
    Qiht,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::AmpPe => "amp_pe",
            Method::AmpOracle => "amp_oracle",
            Method::AmpAwgn => "amp_awgn",
            Method::Qiht => "qiht",
        }
    }
}

/// Method knobs with the defaults used throughout the synthetic sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOptions {
    /// Damping rate on the estimated parameters.
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Gaussian mixture components in the BGM prior.
    pub i_components: usize,
    pub inner_pe_iters: usize,
    pub damp_x: bool,
    /// Initial noise variance for the estimated channels.
    pub gamma_w0: f64,
    /// QIHT step size; defaults to N/‖A‖_F².
    pub qiht_step: Option<f64>,
    pub qiht_iters: usize,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            damping: 0.2,
            max_iters: 200,
            tol: 1e-6,
            i_components: 2,
            inner_pe_iters: 1,
            damp_x: false,
            gamma_w0: 1e-6,
            qiht_step: None,
            qiht_iters: 300,
        }
    }
}

fn default_trials() -> usize {
    100
}
fn default_matrix_variance() -> MatrixVariance {
    MatrixVariance::Unit
}

/// One experiment cell: a (signal, matrix, noise, quantizer, method)
/// combination run for `trials` independent trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub sampling_ratio: f64,
    pub sparsity: f64,
    pub dist: NonzeroDist,
    pub bits: u32,
    pub pre_qnt_snr_db: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    #[serde(default = "default_matrix_variance")]
    pub matrix_variance: MatrixVariance,
    #[serde(default, flatten)]
    pub opts: MethodOptions,
}

impl ExperimentConfig {
    pub fn m(&self) -> usize {
        ((self.sampling_ratio * self.n as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::EmptyN);
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(ConfigError::BadSparsity(self.sparsity));
        }
        if self.trials == 0 {
            return Err(ConfigError::NoTrials);
        }
        if self.bits == 0 {
            return Err(ConfigError::NoBits);
        }
        if !(self.sampling_ratio > 0.0) {
            return Err(ConfigError::BadRatio(self.sampling_ratio));
        }
        if self.method == Method::AmpOracle && self.dist != NonzeroDist::Gaussian {
            return Err(ConfigError::OracleNeedsGaussian);
        }
        Ok(())
    }
}

/// Grid over sampling ratios × SNRs × methods, with everything else shared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub sparsity: f64,
    pub dist: NonzeroDist,
    pub bits: u32,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_matrix_variance")]
    pub matrix_variance: MatrixVariance,
    pub sampling_ratios: Vec<f64>,
    pub snr_dbs: Vec<f64>,
    pub methods: Vec<Method>,
    #[serde(default, flatten)]
    pub opts: MethodOptions,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sampling_ratios.is_empty() || self.snr_dbs.is_empty() || self.methods.is_empty() {
            return Err(ConfigError::EmptySweepAxis);
        }
        for (ri, &ratio) in self.sampling_ratios.iter().enumerate() {
            let cell = self.cell(ri, 0, 0);
            cell.validate()?;
            let _ = ratio;
        }
        Ok(())
    }

    /// The experiment config of one grid cell.
    pub fn cell(&self, ratio_idx: usize, snr_idx: usize, method_idx: usize) -> ExperimentConfig {
        ExperimentConfig {
            n: self.n,
            sampling_ratio: self.sampling_ratios[ratio_idx],
            sparsity: self.sparsity,
            dist: self.dist,
            bits: self.bits,
            pre_qnt_snr_db: self.snr_dbs[snr_idx],
            trials: self.trials,
            seed: self.seed,
            method: self.methods[method_idx],
            matrix_variance: self.matrix_variance,
            opts: self.opts.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let js = r#"{
            "n": 1000, "sampling_ratio": 5.0, "sparsity": 0.5,
            "dist": "gaussian", "bits": 1, "pre_qnt_snr_db": 30.0,
            "method": "amp_pe"
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(js).unwrap();
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.opts.damping, 0.2);
        assert_eq!(cfg.opts.i_components, 2);
        assert_eq!(cfg.m(), 5000);
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.sparsity = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.method = Method::AmpOracle;
        bad.dist = NonzeroDist::Cauchy;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flattened_options_parse() {
        let js = r#"{
            "n": 100, "sampling_ratio": 2.0, "sparsity": 0.1,
            "dist": "laplace", "bits": 2, "pre_qnt_snr_db": 10.0,
            "method": "qiht", "qiht_iters": 50, "damping": 0.5
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(js).unwrap();
        assert_eq!(cfg.opts.qiht_iters, 50);
        assert_eq!(cfg.opts.damping, 0.5);
    }
}
