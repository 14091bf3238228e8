//! Per-region AR(1) by ordinary least squares.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Coefficients {
    pub intercept: f64,
    pub phi: f64,
}

impl Ar1Coefficients {
    /// Iterates `x ← c + φ x` `horizon` times.
    pub fn forecast(&self, last: f64, horizon: usize) -> f64 {
        (0..horizon).fold(last, |x, _| self.intercept + self.phi * x)
    }
}

/// Fits `x_{t+1} = c + φ x_t` on consecutive pairs; non-finite entries mark
/// missing observations and break pairs.
pub fn fit_ar1_series(series: &[f64]) -> Result<Ar1Coefficients> {
    let observed = series.iter().filter(|v| v.is_finite()).count();
    if observed < 3 {
        return Err(Error::WindowTooShort(format!("AR(1) needs 3 observations, got {observed}")));
    }
    let pairs: Vec<(f64, f64)> = series
        .windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| (w[0], w[1]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::WindowTooShort("AR(1) needs consecutive observations".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        // Degenerate regressor: a constant predictor.
        let constant = series.iter().rev().find(|v| v.is_finite()).copied().unwrap_or(my);
        return Ok(Ar1Coefficients {
            intercept: constant,
            phi: 0.0,
        });
    }
    let phi = sxy / sxx;
    Ok(Ar1Coefficients {
        intercept: my - phi * mx,
        phi,
    })
}

pub fn fit_ar1(series: &[Vec<f64>]) -> Result<Vec<Ar1Coefficients>> {
    series.iter().map(|s| fit_ar1_series(s)).collect()
}
