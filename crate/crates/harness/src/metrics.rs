//! Recovery metrics.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth is the zero vector")]
    ZeroTruth,
}

/// Plain and scale-debiased normalized mean squared error.
///
/// plain = ‖x − x̂‖²/‖x‖²; debiased minimizes over a scalar gain,
/// min_α ‖x − αx̂‖²/‖x‖² with α = ⟨x, x̂⟩/‖x̂‖² (α = 0 for x̂ = 0), which
/// removes the scale ambiguity inherent to 1-bit measurements.
pub fn nmse(x_true: &[f64], x_hat: &[f64]) -> Result<(f64, f64), MetricError> {
    if x_true.len() != x_hat.len() {
        return Err(MetricError::LengthMismatch(x_true.len(), x_hat.len()));
    }
    let truth_sq: f64 = x_true.iter().map(|v| v * v).sum();
    if !(truth_sq > 0.0) {
        return Err(MetricError::ZeroTruth);
    }
    let err_sq: f64 = x_true
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let hat_sq: f64 = x_hat.iter().map(|v| v * v).sum();
    let alpha = if hat_sq > 0.0 {
        x_true.iter().zip(x_hat).map(|(a, b)| a * b).sum::<f64>() / hat_sq
    } else {
        0.0
    };
    let err_deb: f64 = x_true
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - alpha * b) * (a - alpha * b))
        .sum();
    Ok((err_sq / truth_sq, err_deb / truth_sq))
}

/// 10·log10(v), the dB form used in the sweep outputs.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}
