use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Log density of `N(mean, variance)` at `z`.
pub fn gauss_logpdf(z: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::NonPositiveVariance(variance));
    }
    let r = z - mean;
    Ok(-0.5 * (2.0 * PI * variance).ln() - r * r / (2.0 * variance))
}

/// `E_{f ~ N(mean, var)} [log N(y | f, noise)]`.
pub fn expected_gauss_loglik(y: f64, mean: f64, var: f64, noise: f64) -> f64 {
    let r = y - mean;
    -0.5 * (2.0 * PI * noise).ln() - (r * r + var) / (2.0 * noise)
}
