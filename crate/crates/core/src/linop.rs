//! Measurement-map abstraction: forward and adjoint applications plus the
//! squared Frobenius norm the scalar-variance AMP updates need.

use crate::numerics::{child_seed, rng_from_seed};

/// Abstract M×N measurement operator.
///
/// Implementations must satisfy adjoint consistency,
/// ⟨Ax, s⟩ = ⟨x, Aᵀs⟩, within 1e−8 relative on random probes, and report a
/// positive squared Frobenius norm.
pub trait LinearOperator: Sync {
    /// (M, N) = (measurements, signal length).
    fn dims(&self) -> (usize, usize);

    /// out = A x. `x` has length N, `out` length M.
    fn forward(&self, x: &[f64], out: &mut [f64]);

    /// out = Aᵀ s. `s` has length M, `out` length N.
    fn adjoint(&self, s: &[f64], out: &mut [f64]);

    /// ‖A‖_F².
    fn frob_norm_sq(&self) -> f64;
}

/// Dense row-major matrix operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    fro2: f64,
}

impl DenseOperator {
    /// `data` is row-major with `rows·cols` entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        let fro2 = data.iter().map(|a| a * a).sum();
        Self { rows, cols, data, fro2 }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }
}

impl LinearOperator for DenseOperator {
    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn adjoint(&self, s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(s.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (m, &sm) in s.iter().enumerate() {
            if sm == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(m)) {
                *o += a * sm;
            }
        }
    }

    fn frob_norm_sq(&self) -> f64 {
        self.fro2
    }
}

/// Largest relative defect of ⟨Ax, s⟩ = ⟨x, Aᵀs⟩ over seeded random probes.
pub fn adjoint_consistency<Op: LinearOperator + ?Sized>(op: &Op, seed: u64, probes: usize) -> f64 {
    use rand::Rng;
    let (m, n) = op.dims();
    let mut worst = 0.0f64;
    let mut ax = vec![0.0; m];
    let mut ats = vec![0.0; n];
    for p in 0..probes {
        let mut rng = rng_from_seed(child_seed(seed, p as u64));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        op.forward(&x, &mut ax);
        op.adjoint(&s, &mut ats);
        let lhs: f64 = ax.iter().zip(&s).map(|(a, b)| a * b).sum();
        let rhs: f64 = ats.iter().zip(&x).map(|(a, b)| a * b).sum();
        let scale = lhs.abs().max(rhs.abs()).max(1e-30);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}
