use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiusError {
    #[error("confidence level eta = {0} must lie in (0, 1)")]
    Eta(f64),
    #[error("invalid parameter: {0}")]
    Parameter(&'static str),
}

/// Radius giving a `1 - eta` out-of-sample guarantee from `n` samples:
/// `(log(c1/eta) / (c2 n))^(1/a)` below the sample threshold
/// `log(c1/eta) / (c2 c3)` and `(log(c1/eta) / (c2 n))^(1/p)` at or above it.
/// The constants depend on the light-tail parameters of the data and are
/// supplied by the caller.
pub fn wasserstein_radius(eta: f64, n: usize, a: f64, c1: f64, c2: f64, c3: f64, p: usize) -> Result<f64, RadiusError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(RadiusError::Eta(eta));
    }
    if !(a > 1.0) {
        return Err(RadiusError::Parameter("a must exceed 1"));
    }
    if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
        return Err(RadiusError::Parameter("c1, c2, c3 must be positive"));
    }
    if n == 0 || p == 0 {
        return Err(RadiusError::Parameter("n and p must be positive"));
    }
    let log_term = (c1 / eta).ln();
    let base = log_term / (c2 * n as f64);
    let threshold = log_term / (c2 * c3);
    let exponent = if (n as f64) < threshold { 1.0 / a } else { 1.0 / p as f64 };
    Ok(base.max(0.0).powf(exponent))
}
