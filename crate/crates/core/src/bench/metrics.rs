use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Which MNLL formula to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnllVariant {
    /// Negative mean Gaussian log density.
    #[default]
    Density,
    /// Negative mean log of the standard normal pdf at the standardized
    /// residual, without the `log σ` term.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub r2: f64,
    pub rmse: f64,
    pub mnll: f64,
    pub n_test: usize,
    pub variant: MnllVariant,
}

/// Accuracy metrics of predictions `mean ± sqrt(var)` against `y`.
pub fn compute_metrics(y: &[f64], mean: &[f64], var: &[f64], variant: MnllVariant) -> Result<MetricsReport> {
    let n = y.len();
    if mean.len() != n {
        return Err(Error::LengthMismatch(n, mean.len()));
    }
    if var.len() != n {
        return Err(Error::LengthMismatch(n, var.len()));
    }
    if n == 0 {
        return Err(Error::DegenerateData("no test points".into()));
    }
    if let Some(&v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositiveVariance(v));
    }
    let y_bar = y.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = y.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - y_bar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let literal: f64 = y
        .iter()
        .zip(mean)
        .zip(var)
        .map(|((a, m), v)| HALF_LN_2PI + 0.5 * (a - m).powi(2) / v)
        .sum::<f64>()
        / n as f64;
    let mnll = match variant {
        MnllVariant::Literal => literal,
        MnllVariant::Density => literal + mean_log_sd(var),
    };
    Ok(MetricsReport {
        r2,
        rmse: (ss_res / n as f64).sqrt(),
        mnll,
        n_test: n,
        variant,
    })
}

/// `mean(log σ̂)`, the gap between the two MNLL variants.
pub fn mean_log_sd(var: &[f64]) -> f64 {
    var.iter().map(|v| 0.5 * v.ln()).sum::<f64>() / var.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [0.3, -1.0, 2.5];
        for variant in [MnllVariant::Density, MnllVariant::Literal] {
            let m = compute_metrics(&y, &y, &[1.0; 3], variant).unwrap();
            assert_eq!(m.rmse, 0.0);
            assert_eq!(m.r2, 1.0);
            assert!((m.mnll - 0.918939).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0], &[1.0], MnllVariant::Density), Err(Error::LengthMismatch(..))));
        assert!(matches!(compute_metrics(&[1.0], &[1.0], &[0.0], MnllVariant::Density), Err(Error::NonPositiveVariance(_))));
    }
}
