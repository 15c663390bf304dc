//! Synthetic experiment generation: sparse signals, dense Gaussian
//! measurement matrices, noise calibration to a pre-quantization SNR
//! target, and per-instance quantizer construction.

use quantamp_core::linop::DenseOperator;
use quantamp_core::numerics::{child_seed, rng_from_seed};
use quantamp_core::quantized_channel::{make_uniform_quantizer, ChannelError, Quantizer};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("sparsity must lie in [0,1], got {0}")]
    BadSparsity(f64),
    #[error("dimensions must be positive")]
    EmptyDims,
    #[error("noise calibration needs a nonzero signal")]
    ZeroSignal,
}

/// Distribution of the nonzero signal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonzeroDist {
    Gaussian,
    Cauchy,
    Laplace,
}

impl NonzeroDist {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            NonzeroDist::Gaussian => Normal::new(0.0, 1.0).unwrap().sample(rng),
            NonzeroDist::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(rng),
            NonzeroDist::Laplace => {
                // inverse CDF of the unit-rate Laplace density ½·e^{−|x|}
                let u: f64 = rng.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// Length-N signal with exactly round(sparsity·N) nonzero entries at
/// uniformly random positions, values i.i.d. from `dist`.
pub fn gen_signal(
    n: usize,
    sparsity: f64,
    dist: NonzeroDist,
    seed: u64,
) -> Result<Vec<f64>, GenError> {
    if n == 0 {
        return Err(GenError::EmptyDims);
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(GenError::BadSparsity(sparsity));
    }
    let e = ((sparsity * n as f64).round() as usize).min(n);
    let mut x = vec![0.0; n];
    if e == 0 {
        return Ok(x);
    }
    let mut rng = rng_from_seed(child_seed(seed, 0x5349_474e));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    for &i in idx.iter().take(e) {
        let mut v = dist.sample(&mut rng);
        while v == 0.0 {
            v = dist.sample(&mut rng);
        }
        x[i] = v;
    }
    Ok(x)
}

/// Entry variance of the generated measurement matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixVariance {
    /// A_mn ~ N(0, 1)
    Unit,
    /// A_mn ~ N(0, 1/M)
    OneOverM,
}

/// Dense i.i.d. Gaussian measurement matrix with its exact ‖A‖_F².
pub fn gen_matrix(
    m: usize,
    n: usize,
    variance: MatrixVariance,
    seed: u64,
) -> Result<DenseOperator, GenError> {
    if m == 0 || n == 0 {
        return Err(GenError::EmptyDims);
    }
    let sd = match variance {
        MatrixVariance::Unit => 1.0,
        MatrixVariance::OneOverM => (1.0 / m as f64).sqrt(),
    };
    let mut rng = rng_from_seed(child_seed(seed, 0x4d41_5452));
    let normal = Normal::new(0.0, sd).unwrap();
    let data: Vec<f64> = (0..m * n).map(|_| normal.sample(&mut rng)).collect();
    Ok(DenseOperator::new(m, n, data))
}

/// Noise variance putting the pre-quantization SNR of z + w at the target:
/// γ_w = (‖z‖²/M)·10^(−snr_db/10).
pub fn calibrate_noise(z: &[f64], snr_db: f64) -> Result<f64, GenError> {
    let power: f64 = z.iter().map(|v| v * v).sum::<f64>() / z.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(GenError::ZeroSignal);
    }
    Ok(power * 10f64.powf(-snr_db / 10.0))
}

/// Adds seeded N(0, γ_w) noise to the noiseless measurements.
pub fn add_noise(z: &[f64], gamma_w: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(child_seed(seed, 0x4e4f_4953));
    let normal = Normal::new(0.0, gamma_w.max(0.0).sqrt()).unwrap();
    z.iter().map(|&v| v + normal.sample(&mut rng)).collect()
}

/// Per-instance uniform mid-rise quantizer: step 2·std(v)·2^{1−B} so the
/// cells cover ≈ ±2 standard deviations of the pre-quantization signal.
/// The 1-bit case is the sign quantizer regardless of scale.
pub fn calibrated_quantizer(bits: u32, v: &[f64]) -> Result<Quantizer, ChannelError> {
    if bits == 1 {
        return make_uniform_quantizer(1, 1.0);
    }
    let power: f64 = v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64;
    let std = power.sqrt().max(1e-12);
    let step = 2.0 * std * 2f64.powi(1 - bits as i32);
    make_uniform_quantizer(bits, step)
}
