//! Log-log least-squares fits of ensemble metrics against the horizon.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% Student-t half-width of the slope.
    pub half_width: f64,
    /// `value·√T/log T` per grid point; flat when the decay is `log T/√T`.
    pub profile: Vec<f64>,
}

impl RateFit {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.slope >= lo && self.slope <= hi
    }
}

/// Fits `log(value) = intercept + slope·log(T)`.
pub fn rate_fit(t_grid: &[f64], values: &[f64]) -> Result<RateFit, AnalysisError> {
    if t_grid.len() != values.len() {
        return Err(AnalysisError::Fit(format!(
            "{} horizons but {} values",
            t_grid.len(),
            values.len()
        )));
    }
    if t_grid.len() < 3 {
        return Err(AnalysisError::Fit("at least three horizons are needed".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(AnalysisError::Fit(format!("values must be positive, got {v}")));
    }
    if let Some(t) = t_grid.iter().find(|t| !(t.is_finite() && **t > 1.0)) {
        return Err(AnalysisError::Fit(format!("horizons must exceed 1, got {t}")));
    }
    let x: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Fit("horizons must not all coincide".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = m - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let quantile = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
    let profile = t_grid.iter().zip(values).map(|(t, v)| v * t.sqrt() / t.ln()).collect();
    Ok(RateFit {
        t_grid: t_grid.to_vec(),
        values: values.to_vec(),
        slope,
        intercept,
        half_width: quantile * se,
        profile,
    })
}
