//! Reference implementations used by `selftest` and the acceptance suite:
//! adaptive quadrature of the channel-defining integrals and certified
//! finite differences. Everything here is built from `libm` primitives
//! directly and deliberately avoids the analytic closed forms it is used
//! to check.

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Adaptive Simpson integration on [a, b] to the requested absolute
/// tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Integrates across the given breakpoints, splitting at each.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(f: &F, pts: &[f64], tol: f64) -> f64 {
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += adaptive_simpson(f, w[0], w[1], tol / (pts.len() - 1) as f64);
    }
    total
}

/// Quadrature moments (mass, mean, variance) of the posterior density
/// ∝ weight(z)·N(z|q, tau_q) with `weight` the probability that z + w
/// lands in [lo, hi] for w ~ N(0, gamma_w).
pub fn quantized_posterior_moments(
    q: f64,
    tau_q: f64,
    lo: f64,
    hi: f64,
    gamma_w: f64,
) -> (f64, f64, f64) {
    let sd_q = tau_q.sqrt();
    let sd_w = gamma_w.sqrt();
    let weight = move |z: f64| norm_cdf((hi - z) / sd_w) - norm_cdf((lo - z) / sd_w);
    let density = move |z: f64| weight(z) * phi((z - q) / sd_q) / sd_q;

    // The integrand lives where both the Gaussian bump and the (smoothed)
    // cell indicator have mass.
    let mut left = q - 45.0 * sd_q;
    let mut right = q + 45.0 * sd_q;
    if lo.is_finite() {
        left = left.max(lo - 45.0 * sd_w);
    }
    if hi.is_finite() {
        right = right.min(hi + 45.0 * sd_w);
    }
    if left >= right {
        return (0.0, q, 0.0);
    }
    let mut pts = vec![left];
    for p in [lo, hi, q, 0.5 * (left + right)] {
        if p.is_finite() && p > left && p < right {
            pts.push(p);
        }
    }
    pts.push(right);
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    // scale-free tolerance: normalize by a pilot estimate of the mass
    let pilot = integrate_piecewise(&density, &pts, 1e-200).max(1e-280);
    let tol = pilot * 1e-12;
    let mass = integrate_piecewise(&density, &pts, tol);
    let m1 = integrate_piecewise(&|z: f64| z * density(z), &pts, tol * (q.abs() + sd_q));
    let m2 = integrate_piecewise(
        &|z: f64| z * z * density(z),
        &pts,
        tol * (q * q + tau_q),
    );
    let mean = m1 / mass;
    let var = (m2 / mass - mean * mean).max(0.0);
    (mass, mean, var)
}

/// Quadrature moments (evidence, mean, variance) of the posterior of x
/// under a spike-plus-mixture prior observed through r ~ N(x, tau_r). The
/// spike term is handled analytically; the continuous part by quadrature.
pub fn bgm_posterior_moments(
    r: f64,
    tau_r: f64,
    kappa: f64,
    weights: &[f64],
    means: &[f64],
    vars: &[f64],
) -> (f64, f64, f64) {
    let sd_r = tau_r.sqrt();
    let spike = (1.0 - kappa) * phi(r / sd_r) / sd_r;
    let k = weights.len();
    let cont = move |x: f64| {
        let mut p = 0.0;
        for i in 0..k {
            let sd = vars[i].sqrt();
            p += kappa * weights[i] * phi((x - means[i]) / sd) / sd;
        }
        p * phi((x - r) / sd_r) / sd_r
    };
    let mut pts = vec![r - 45.0 * sd_r, r + 45.0 * sd_r];
    for i in 0..k {
        let sd = vars[i].sqrt();
        pts.push(means[i] - 45.0 * sd);
        pts.push(means[i] + 45.0 * sd);
        pts.push(means[i]);
    }
    pts.push(r);
    pts.push(0.0);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let lo = pts[0];
    let hi = *pts.last().unwrap();
    let inner: Vec<f64> = pts.into_iter().filter(|&p| p >= lo && p <= hi).collect();

    let pilot = integrate_piecewise(&cont, &inner, 1e-200).max(1e-280);
    let tol = pilot * 1e-12;
    let c0 = integrate_piecewise(&cont, &inner, tol);
    let scale = 1.0 + r.abs();
    let c1 = integrate_piecewise(&|x: f64| x * cont(x), &inner, tol * scale);
    let c2 = integrate_piecewise(&|x: f64| x * x * cont(x), &inner, tol * scale * scale);
    let evidence = spike + c0;
    let mean = c1 / evidence;
    let var = (c2 / evidence - mean * mean).max(0.0);
    (evidence, mean, var)
}

/// Certified central finite differences: first and second derivatives with
/// error estimates from a step ladder. Returns None when no step size gives
/// a self-consistent answer.
pub fn certified_fd<F: Fn(f64) -> f64>(
    g: &F,
    x: f64,
    max_step: f64,
) -> Option<(f64, f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    let mut h = max_step;
    for _ in 0..10 {
        let (gp, gm, g0) = (g(x + h), g(x - h), g(x));
        let d1 = (gp - gm) / (2.0 * h);
        let d2 = (gp - 2.0 * g0 + gm) / (h * h);
        if let Some((p1, p2)) = prev {
            let e1 = (d1 - p1).abs();
            let e2 = (d2 - p2).abs();
            match best {
                Some((_, be1, _, be2)) if e1 + e2 >= be1 + be2 => {}
                _ => best = Some((d1, e1, d2, e2)),
            }
        }
        prev = Some((d1, d2));
        h *= 0.5;
    }
    best
}
