//! Bernoulli–Gaussian-mixture input channel: prior evaluation, posterior
//! moments of the signal given the dummy observation `r`, EM parameter
//! estimation, and sampling.
//!
//! The prior is a point mass at zero with probability 1−κ plus an
//! I-component Gaussian mixture with weights ξ_i, means μ_i and variances
//! γx_i; the first component is pinned to zero mean so a wide component can
//! absorb heavy-tailed signals. All per-entry quantities are computed in the
//! log domain: late in AMP `tau_r` can be tiny, and the mixture densities
//! then span hundreds of orders of magnitude.

use serde::{Deserialize, Serialize};

use crate::numerics::{
    child_seed, gaussian_logpdf, log_sum_exp, rng_from_seed, PROB_FLOOR, VAR_FLOOR,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PriorError {
    #[error("kappa must lie in [0,1], got {0}")]
    KappaOutOfRange(f64),
    #[error("mixture needs at least one component")]
    Empty,
    #[error("weights/means/vars must have equal length")]
    LengthMismatch,
    #[error("weights must be nonnegative and sum to 1 within 1e-10, got sum {0}")]
    WeightsNotNormalized(f64),
    #[error("first component mean must be 0, got {0}")]
    FirstMeanNotZero(f64),
    #[error("non-finite parameter")]
    NonFinite,
    #[error("component counts differ: {0} vs {1}")]
    ComponentMismatch(usize, usize),
    #[error("pseudo-data is empty")]
    EmptyData,
    #[error("damping rate must lie in (0,1], got {0}")]
    BadDamping(f64),
}

/// Sparse-signal prior: spike at zero with probability 1−κ plus a Gaussian
/// mixture. Serializes as `{kappa, weights[], means[], vars[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PriorJson", into = "PriorJson")]
pub struct SignalPrior {
    kappa: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PriorJson {
    kappa: f64,
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

impl TryFrom<PriorJson> for SignalPrior {
    type Error = PriorError;
    fn try_from(p: PriorJson) -> Result<Self, PriorError> {
        SignalPrior::new(p.kappa, p.weights, p.means, p.vars)
    }
}

impl From<SignalPrior> for PriorJson {
    fn from(p: SignalPrior) -> Self {
        PriorJson { kappa: p.kappa, weights: p.weights, means: p.means, vars: p.vars }
    }
}

impl SignalPrior {
    /// Validates the invariants: κ ∈ [0,1], Σξ = 1 within 1e−10, μ_1 = 0.
    /// Component variances are floored at [`VAR_FLOOR`].
    pub fn new(
        kappa: f64,
        weights: Vec<f64>,
        means: Vec<f64>,
        mut vars: Vec<f64>,
    ) -> Result<Self, PriorError> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(PriorError::KappaOutOfRange(kappa));
        }
        if weights.is_empty() {
            return Err(PriorError::Empty);
        }
        if weights.len() != means.len() || weights.len() != vars.len() {
            return Err(PriorError::LengthMismatch);
        }
        let all_finite = weights.iter().chain(&means).chain(&vars).all(|v| v.is_finite());
        if !all_finite {
            return Err(PriorError::NonFinite);
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(PriorError::WeightsNotNormalized(f64::NAN));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(PriorError::WeightsNotNormalized(sum));
        }
        if means[0] != 0.0 {
            return Err(PriorError::FirstMeanNotZero(means[0]));
        }
        for v in &mut vars {
            *v = v.max(VAR_FLOOR);
        }
        Ok(Self { kappa, weights, means, vars })
    }

    /// Single zero-mean component shorthand: κ spike weight, N(0, var).
    pub fn bernoulli_gaussian(kappa: f64, var: f64) -> Result<Self, PriorError> {
        Self::new(kappa, vec![1.0], vec![0.0], vec![var])
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    /// Prior mean κ·Σξ_iμ_i.
    pub fn mean(&self) -> f64 {
        self.kappa
            * self
                .weights
                .iter()
                .zip(&self.means)
                .map(|(w, m)| w * m)
                .sum::<f64>()
    }

    /// Prior variance κ·Σξ_i(γx_i + μ_i²) − (κ·Σξ_iμ_i)².
    pub fn variance(&self) -> f64 {
        let second: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((w, m), v)| w * (v + m * m))
            .sum();
        let mean = self.mean();
        (self.kappa * second - mean * mean).max(0.0)
    }

    /// Log-domain unnormalized posterior terms given r ~ N(x, tau_r):
    /// entry 0 is the spike, entries 1..=I the mixture components.
    fn log_terms(&self, r: f64, tau_r: f64, out: &mut Vec<f64>) {
        out.clear();
        let spike = if self.kappa < 1.0 {
            (1.0 - self.kappa).ln() + gaussian_logpdf(r, 0.0, tau_r)
        } else {
            f64::NEG_INFINITY
        };
        out.push(spike);
        for i in 0..self.weights.len() {
            let w = self.kappa * self.weights[i];
            let t = if w > 0.0 {
                w.ln() + gaussian_logpdf(r, self.means[i], self.vars[i] + tau_r)
            } else {
                f64::NEG_INFINITY
            };
            out.push(t);
        }
    }

    /// log Ψ(r, λ) = log[(1−κ)N(r|0,τ_r) + Σ κξ_i N(r|μ_i, γx_i+τ_r)].
    pub fn log_evidence(&self, r: f64, tau_r: f64) -> f64 {
        let mut terms = Vec::with_capacity(self.weights.len() + 1);
        self.log_terms(r, tau_r, &mut terms);
        log_sum_exp(&terms)
    }

    /// Ψ(r, λ), clamped below by [`PROB_FLOOR`].
    pub fn evidence(&self, r: f64, tau_r: f64) -> f64 {
        self.log_evidence(r, tau_r).exp().max(PROB_FLOOR)
    }

    /// Posterior mean and variance of x given r ~ N(x, tau_r).
    pub fn posterior_moments(&self, r: f64, tau_r: f64) -> (f64, f64) {
        let mut terms = Vec::with_capacity(self.weights.len() + 1);
        self.log_terms(r, tau_r, &mut terms);
        let log_psi = log_sum_exp(&terms);
        if log_psi == f64::NEG_INFINITY {
            return (0.0, 0.0);
        }
        let mut mean = 0.0;
        let mut second = 0.0;
        for i in 0..self.weights.len() {
            let w = (terms[i + 1] - log_psi).exp();
            if w == 0.0 {
                continue;
            }
            let denom = self.vars[i] + tau_r;
            let m = (self.means[i] * tau_r + r * self.vars[i]) / denom;
            let v = self.vars[i] * tau_r / denom;
            mean += w * m;
            second += w * (v + m * m);
        }
        (mean, (second - mean * mean).max(0.0))
    }

    pub fn posterior_mean(&self, r: f64, tau_r: f64) -> f64 {
        self.posterior_moments(r, tau_r).0
    }

    pub fn posterior_var(&self, r: f64, tau_r: f64) -> f64 {
        self.posterior_moments(r, tau_r).1
    }

    /// EM responsibilities of the latent component label: (ψ₀, ψ_1..=I).
    /// They sum to 1 by construction.
    pub fn responsibilities(&self, r: f64, tau_r: f64) -> (f64, Vec<f64>) {
        let mut terms = Vec::with_capacity(self.weights.len() + 1);
        self.log_terms(r, tau_r, &mut terms);
        let log_psi = log_sum_exp(&terms);
        if log_psi == f64::NEG_INFINITY {
            // Degenerate corner (κ = 1 with fully underflowed components);
            // fall back to the prior weights.
            return (0.0, self.weights.clone());
        }
        let psi0 = (terms[0] - log_psi).exp();
        let psi = terms[1..].iter().map(|&t| (t - log_psi).exp()).collect();
        (psi0, psi)
    }

    /// Convex interpolation old + eta·(new − old), field by field.
    /// `eta = 1` returns `new` exactly.
    pub fn damped(old: &Self, new: &Self, eta: f64) -> Result<Self, PriorError> {
        if old.num_components() != new.num_components() {
            return Err(PriorError::ComponentMismatch(
                old.num_components(),
                new.num_components(),
            ));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(PriorError::BadDamping(eta));
        }
        if eta == 1.0 {
            return Ok(new.clone());
        }
        let lerp = |a: f64, b: f64| a + eta * (b - a);
        let mut weights: Vec<f64> =
            old.weights.iter().zip(&new.weights).map(|(&a, &b)| lerp(a, b)).collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        Self::new(
            lerp(old.kappa, new.kappa).clamp(0.0, 1.0),
            weights,
            old.means.iter().zip(&new.means).map(|(&a, &b)| lerp(a, b)).collect(),
            old.vars.iter().zip(&new.vars).map(|(&a, &b)| lerp(a, b)).collect(),
        )
    }
}

/// Dummy observations r_n ~ N(x_n, tau_r) shared across entries.
#[derive(Debug, Clone, Copy)]
pub struct InputPseudoData<'a> {
    r: &'a [f64],
    tau_r: f64,
}

impl<'a> InputPseudoData<'a> {
    /// `tau_r` is floored at [`VAR_FLOOR`]; entries must be finite.
    pub fn new(r: &'a [f64], tau_r: f64) -> Result<Self, PriorError> {
        if !tau_r.is_finite() || r.iter().any(|v| !v.is_finite()) {
            return Err(PriorError::NonFinite);
        }
        Ok(Self { r, tau_r: tau_r.max(VAR_FLOOR) })
    }

    pub fn r(&self) -> &[f64] {
        self.r
    }
    pub fn tau_r(&self) -> f64 {
        self.tau_r
    }
}

/// Log-posterior of λ up to a constant: Σ_n log Ψ(r_n, λ). Used for the EM
/// monotonicity checks and diagnostics.
pub fn pe_objective(data: &InputPseudoData, prior: &SignalPrior) -> f64 {
    data.r.iter().map(|&r| prior.log_evidence(r, data.tau_r)).sum()
}

/// One EM step on the prior parameters; all variance updates floored at
/// [`VAR_FLOOR`].
pub fn em_update(data: &InputPseudoData, prior: &SignalPrior) -> Result<SignalPrior, PriorError> {
    em_update_with_floor(data, prior, VAR_FLOOR)
}

/// One EM step with a dedicated floor for the first (wide, zero-mean)
/// component's variance, preventing its collapse onto the spike.
///
/// κ is clamped to [1e−8, 1−1e−8], mixture weights renormalized, μ_1 kept
/// pinned at 0, and γx updates floored (the closed-form update subtracts
/// τ_r and can go negative). The floors are projections of unimodal
/// coordinate maximizers, so the step never decreases [`pe_objective`]
/// as long as the incoming prior is itself feasible.
pub fn em_update_with_floor(
    data: &InputPseudoData,
    prior: &SignalPrior,
    gamma1_floor: f64,
) -> Result<SignalPrior, PriorError> {
    let n = data.r.len();
    if n == 0 {
        return Err(PriorError::EmptyData);
    }
    let i_comp = prior.num_components();
    let mut s0 = 0.0;
    let mut s = vec![0.0; i_comp];
    let mut sr = vec![0.0; i_comp];
    let mut sd = vec![0.0; i_comp];
    for &r in data.r {
        let (psi0, psi) = prior.responsibilities(r, data.tau_r);
        s0 += psi0;
        for i in 0..i_comp {
            s[i] += psi[i];
            sr[i] += psi[i] * r;
            let d = r - prior.means[i];
            sd[i] += psi[i] * d * d;
        }
    }
    let s_plus: f64 = s.iter().sum();
    let kappa = if s0 + s_plus > 0.0 {
        (s_plus / (s0 + s_plus)).clamp(1e-8, 1.0 - 1e-8)
    } else {
        prior.kappa
    };
    let mut weights: Vec<f64> = if s_plus > 0.0 {
        s.iter().map(|&si| si / s_plus).collect()
    } else {
        prior.weights.clone()
    };
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    let mut means = prior.means.clone();
    let mut vars = prior.vars.clone();
    for i in 0..i_comp {
        if s[i] <= 0.0 {
            continue;
        }
        // The per-entry Bayes weights 1/(γx_i + τ_r) are shared by all n and
        // cancel, leaving the ψ-weighted mean. μ_1 stays pinned at 0.
        if i >= 1 {
            means[i] = sr[i] / s[i];
        }
        let floor = if i == 0 { gamma1_floor.max(VAR_FLOOR) } else { VAR_FLOOR };
        vars[i] = (sd[i] / s[i] - data.tau_r).max(floor);
    }
    SignalPrior::new(kappa, weights, means, vars)
}

/// i.i.d. draws from the prior.
pub fn sample_bgm(prior: &SignalPrior, n: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rng_from_seed(child_seed(seed, 0x6267_6d73));
    let normals: Vec<Normal<f64>> = prior
        .means
        .iter()
        .zip(&prior.vars)
        .map(|(&m, &v)| Normal::new(m, v.sqrt()).expect("finite prior parameters"))
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() >= prior.kappa {
            out.push(0.0);
            continue;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = prior.weights.len() - 1;
        for (i, &w) in prior.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        out.push(normals[comp].sample(&mut rng));
    }
    out
}
