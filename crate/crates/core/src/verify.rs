//! Convergence sweeps: step lists, log-log slope fits, pass/fail rules.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Finite-difference steps, strictly decreasing.
    pub eps: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub expected_slope: f64,
    pub slope_tol: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { eps: vec![1e-2, 5e-3, 2.5e-3], trials: 3, seed: 42, expected_slope: 2.0, slope_tol: 0.3 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::Invalid("sweep needs at least one step".into()));
        }
        if self.eps.iter().any(|&e| !(e >= 1e-6) || !e.is_finite()) {
            return Err(Error::Invalid("sweep steps must be at least 1e-6".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("sweep steps must be strictly decreasing".into()));
        }
        if self.trials < 3 {
            return Err(Error::Invalid(format!("sweep needs at least 3 trials, got {}", self.trials)));
        }
        if !(self.slope_tol >= 0.0) {
            return Err(Error::Invalid("slope tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn slope_ok(&self, slope: f64) -> bool {
        (slope - self.expected_slope).abs() <= self.slope_tol
    }
}

/// Least-squares slope of log(y) against log(x). Needs at least 3 positive points.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 3 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Residuals of one trial across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub eps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub slope: Option<f64>,
}

impl SweepResult {
    pub fn new(eps: Vec<f64>, residuals: Vec<f64>) -> SweepResult {
        let slope = fit_slope(&eps, &residuals);
        SweepResult { eps, residuals, slope }
    }

    pub fn last(&self) -> f64 {
        *self.residuals.last().unwrap_or(&f64::NAN)
    }
}
