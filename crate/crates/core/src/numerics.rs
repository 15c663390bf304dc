//! Numerically stable scalar special functions shared by the input and
//! output channels, plus the seeded RNG plumbing used by every stochastic
//! module.
//!
//! The channel posteriors divide Gaussian tail masses by each other, so the
//! tail functions here keep *relative* accuracy far past the point where
//! `erfc` underflows: `erfcx` switches to a continued fraction and
//! [`log_half_erfc`] stays finite for any argument.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probability masses are clamped here before being used as divisors.
pub const PROB_FLOOR: f64 = 1e-300;

/// Variances are clamped here before being used as divisors or in pdfs.
pub const VAR_FLOOR: f64 = 1e-12;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_4;
pub(crate) const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_PI: f64 = 1.772_453_850_905_516;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("interval is inverted: lo={lo} > hi={hi}")]
    InvertedInterval { lo: f64, hi: f64 },
}

/// Gaussian probability density N(x | mean, var).
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> Result<f64, NumericsError> {
    if !(var > 0.0) {
        return Err(NumericsError::NonPositiveVariance(var));
    }
    Ok(gaussian_pdf(x, mean, var))
}

/// N(x | mean, var) without the domain check; callers guarantee `var > 0`.
#[inline]
pub(crate) fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    debug_assert!(var > 0.0);
    let d = x - mean;
    if d.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI / var.sqrt() * (-d * d / (2.0 * var)).exp()
}

/// log N(x | mean, var); callers guarantee `var > 0`.
#[inline]
pub(crate) fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    debug_assert!(var > 0.0);
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Standard normal pdf φ(u), with the convention φ(±∞) = 0.
#[inline]
pub(crate) fn std_normal_pdf(u: f64) -> f64 {
    if u.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Upper-tail mass of the standard normal: ½·erfc(u/√2) = Φ(−u).
///
/// Relative accuracy follows `libm::erfc` (a couple of ulp) down to the
/// underflow point near u ≈ 38.6; beyond that the value is 0, and
/// [`log_half_erfc`] carries the log-domain companion.
pub fn half_erfc(u: f64) -> f64 {
    if u == f64::INFINITY {
        return 0.0;
    }
    if u == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(u / SQRT_2)
}

/// ln(½·erfc(u/√2)), finite for every finite `u`.
pub fn log_half_erfc(u: f64) -> f64 {
    if u == f64::NEG_INFINITY {
        return 0.0;
    }
    if u == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if u <= -1.0 {
        // ln(1 − Φ(u)) with a tiny upper tail; ln_1p keeps all digits.
        return (-half_erfc(-u)).ln_1p();
    }
    if u <= 33.0 {
        return half_erfc(u).ln();
    }
    // Φ(−u) = ½ erfcx(u/√2) e^{−u²/2}
    (0.5 * erfcx(u / SQRT_2)).ln() - 0.5 * u * u
}

/// Scaled complementary error function e^{x²}·erfc(x).
///
/// For x ≥ 4.5 the classic Laplace continued fraction is evaluated backward,
/// which stays fully accurate where the naive product over- or underflows.
/// Negative arguments below ≈ −26.6 overflow to +∞.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        let e = (x * x).exp();
        if e.is_infinite() {
            return f64::INFINITY;
        }
        return 2.0 * e - erfcx(-x);
    }
    if x < 4.5 {
        return (x * x).exp() * libm::erfc(x);
    }
    // erfcx(x) = 1/(√π (x + t)), t = (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + …))))
    let mut t = 0.0;
    for k in (1..=40).rev() {
        t = (k as f64 / 2.0) / (x + t);
    }
    1.0 / (SQRT_PI * (x + t))
}

/// Inverse Mills ratio φ(u)/Φ(−u), evaluated through `erfcx` so it stays
/// accurate for arbitrarily large `u` and decays to 0 for very negative `u`.
#[inline]
pub(crate) fn inv_mills_ratio(u: f64) -> f64 {
    // √(2/π) / erfcx(u/√2); erfcx overflows to +∞ for u ≲ −26.6√2, giving 0.
    0.797_884_560_802_865_4 / erfcx(u / SQRT_2)
}

/// ∫_lo^hi N(u | mean, var) du, evaluated as a difference of same-signed
/// tail masses so far-off cells do not cancel catastrophically.
pub fn gaussian_cell_mass(lo: f64, hi: f64, mean: f64, var: f64) -> Result<f64, NumericsError> {
    if !(var > 0.0) {
        return Err(NumericsError::NonPositiveVariance(var));
    }
    if !(lo <= hi) {
        return Err(NumericsError::InvertedInterval { lo, hi });
    }
    let sd = var.sqrt();
    Ok(std_cell_mass((lo - mean) / sd, (hi - mean) / sd))
}

/// P(a ≤ Z < b) for standard normal Z, a ≤ b, bounds may be infinite.
pub(crate) fn std_cell_mass(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mass = if a >= 0.0 {
        half_erfc(a) - half_erfc(b)
    } else if b <= 0.0 {
        half_erfc(-b) - half_erfc(-a)
    } else {
        // Opposite-signed erf arguments add magnitudes, so no cancellation.
        let erf_b = if b == f64::INFINITY { 1.0 } else { libm::erf(b / SQRT_2) };
        let erf_a = if a == f64::NEG_INFINITY { -1.0 } else { libm::erf(a / SQRT_2) };
        0.5 * (erf_b - erf_a)
    };
    mass.clamp(0.0, 1.0)
}

/// log Σ exp(x_i) with the usual max shift; −∞ entries are ignored.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Deterministic stream cipher RNG from a 64-bit seed. Every stochastic
/// routine in this workspace takes an explicit seed and builds its stream
/// here; parallel code must split seeds with [`child_seed`], never share a
/// stream.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from a parent seed and an index
/// (SplitMix64 finalizer on both words).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn normal_pdf_examples() {
        // standard normal at 0
        assert!(rel(normal_pdf(0.0, 0.0, 1.0).unwrap(), 0.398_942_280_401_432_68) < 1e-15);
        // peak value 1/√(2πv) for any μ, v
        for &(mu, v) in &[(0.3, 0.7), (-4.0, 2.5), (100.0, 1e-6)] {
            let want = 1.0 / (2.0 * std::f64::consts::PI * v).sqrt();
            assert!(rel(normal_pdf(mu, mu, v).unwrap(), want) < 1e-14);
        }
        // high-precision reference evaluation of the closed form
        assert!(rel(normal_pdf(3.0, 1.0, 4.0).unwrap(), 0.120_985_362_259_571_67) < 1e-15);
        assert!(normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn half_erfc_examples() {
        assert_eq!(half_erfc(0.0), 0.5);
        assert_eq!(half_erfc(f64::INFINITY), 0.0);
        assert_eq!(half_erfc(f64::NEG_INFINITY), 1.0);
        // quadrature oracle value of ∫_{−∞}^0 N(u|5,1) du
        assert!(rel(half_erfc(5.0), 2.866_515_718_791_939_1e-7) < 1e-13);
    }

    #[test]
    fn erfcx_reference_grid() {
        let grid = [
            (0.5, 0.615_690_344_192_925_87),
            (1.0, 0.427_583_576_155_807),
            (2.0, 0.255_395_676_310_505_74),
            (5.0, 0.110_704_637_733_068_63),
            (6.0, 0.092_776_567_800_538_354),
            (8.0, 0.069_985_166_200_880_928),
            (10.0, 0.056_140_992_743_822_586),
            (20.0, 0.028_174_348_741_051_319),
            (26.0, 0.021_683_584_850_562_907),
            (30.0, 0.018_795_888_861_416_751),
            (50.0, 0.011_281_536_265_323_773),
            (100.0, 0.005_641_613_782_989_432_9),
            (1000.0, 0.000_564_189_301_453_387_65),
        ];
        for (x, want) in grid {
            assert!(rel(erfcx(x), want) < 2e-15, "erfcx({x})");
        }
        // negative side: erfcx(-1) = 2e^1 − erfcx(1)
        assert!(rel(erfcx(-1.0), 2.0 * 1.0f64.exp() - erfcx(1.0)) < 1e-14);
        assert_eq!(erfcx(-40.0), f64::INFINITY);
    }

    #[test]
    fn log_half_erfc_tail_values() {
        let grid = [
            (35.0, -616.975_101_261_922_51),
            (40.0, -804.608_442_013_753_79),
            (100.0, -5_005.524_208_694_205_1),
            (1000.0, -500_007.826_694_812_18),
        ];
        for (u, want) in grid {
            assert!(rel(log_half_erfc(u), want) < 1e-12, "log_half_erfc({u})");
        }
        // continuity with the direct branch
        assert!((log_half_erfc(32.999) - half_erfc(32.999).ln()).abs() < 1e-10);
        assert_eq!(log_half_erfc(f64::NEG_INFINITY), 0.0);
        assert!(log_half_erfc(-5.0) < 0.0 && log_half_erfc(-5.0) > -1e-6);
    }

    #[test]
    fn cell_mass_examples() {
        assert_eq!(
            gaussian_cell_mass(f64::NEG_INFINITY, f64::INFINITY, 3.0, 2.0).unwrap(),
            1.0
        );
        assert_eq!(gaussian_cell_mass(f64::NEG_INFINITY, 0.0, 0.0, 1.0).unwrap(), 0.5);
        // quadrature oracle value
        assert!(
            rel(
                gaussian_cell_mass(1.0, 2.0, 0.3, 0.7).unwrap(),
                0.180_309_381_496_556_35
            ) < 1e-13
        );
        assert!(gaussian_cell_mass(2.0, 1.0, 0.0, 1.0).is_err());
        assert!(gaussian_cell_mass(0.0, 1.0, 0.0, 0.0).is_err());
        // far-cell masses stay relatively accurate (no cancellation to 0)
        let far = gaussian_cell_mass(10.0, 10.5, 0.0, 1.0).unwrap();
        assert!(far > 0.0 && far < half_erfc(10.0));
    }

    #[test]
    fn seeds_are_deterministic_and_split() {
        assert_eq!(child_seed(42, 7), child_seed(42, 7));
        assert_ne!(child_seed(42, 7), child_seed(42, 8));
        assert_ne!(child_seed(42, 7), child_seed(43, 7));
        use rand::RngCore;
        let mut a = rng_from_seed(9);
        let mut b = rng_from_seed(9);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    proptest! {
        #[test]
        fn half_erfc_symmetry(u in -30.0f64..30.0) {
            let s = half_erfc(u) + half_erfc(-u);
            prop_assert!((s - 1.0).abs() < 1e-14);
        }

        #[test]
        fn cell_mass_additivity(
            mut pts in proptest::array::uniform3(-8.0f64..8.0),
            mean in -2.0f64..2.0,
            var in 1e-3f64..10.0,
        ) {
            pts.sort_by(f64::total_cmp);
            let (a, b, c) = (pts[0], pts[1], pts[2]);
            let ab = gaussian_cell_mass(a, b, mean, var).unwrap();
            let bc = gaussian_cell_mass(b, c, mean, var).unwrap();
            let ac = gaussian_cell_mass(a, c, mean, var).unwrap();
            prop_assert!((ab + bc - ac).abs() < 1e-12);
        }

        #[test]
        fn tails_underflow_gracefully(u in 0.0f64..500.0) {
            let v = half_erfc(u);
            prop_assert!(v.is_finite() && v >= 0.0);
            prop_assert!(log_half_erfc(u).is_finite());
            prop_assert!(erfcx(u).is_finite() && erfcx(u) > 0.0);
        }
    }
}
