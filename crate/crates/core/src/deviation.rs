//! Linear curvature-to-deviation model fitted on apex-window samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::extract_apex_window;
use crate::telemetry::{lane_deviation, TelemetryRecord};

/// Curvature magnitude [1/m] above which a telemetry sample is part of a curve.
pub const CURVE_KAPPA_MIN: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum DeviationError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("all curvature values are identical, slope is undefined")]
    Degenerate,
    #[error("point {0} is not finite")]
    NonFinite(usize),
    #[error("no curves found in log")]
    NoCurves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// [m²]
    #[serde(rename = "slope_m2")]
    pub slope: f64,
    #[serde(rename = "intercept_m")]
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of points fitted; 0 when unknown.
    pub n: usize,
}

impl LinearFit {
    /// Field fit `d = -8.327 kappa + 0.214`, R² = 0.673. Its sample count is
    /// not published, so `n` is 0.
    pub const REFERENCE: LinearFit = LinearFit { slope: -8.327, intercept: 0.214, r_squared: 0.673, n: 0 };

    /// Curvature at which the predicted deviation crosses zero.
    pub fn zero_crossing(&self) -> Option<f64> {
        (self.slope != 0.0).then(|| -self.intercept / self.slope)
    }
}

pub fn predict_deviation(fit: &LinearFit, kappa: f64) -> f64 {
    fit.slope * kappa + fit.intercept
}

/// Ordinary least squares of deviation on curvature.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit, DeviationError> {
    let n = points.len();
    if n < 2 {
        return Err(DeviationError::TooFewPoints(n));
    }
    if let Some(i) = points.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(DeviationError::NonFinite(i));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 || points.iter().all(|p| p.0 == points[0].0) {
        return Err(DeviationError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LinearFit { slope, intercept, r_squared, n })
}

/// Index ranges of curve traversals: maximal runs where `|kappa|` exceeds
/// [`CURVE_KAPPA_MIN`] with a constant sign.
pub fn curve_traversals(log: &[TelemetryRecord]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < log.len() {
        let k = log[i].kappa;
        if k.abs() > CURVE_KAPPA_MIN {
            let sign = k.signum();
            let mut j = i;
            while j < log.len() && log[j].kappa.abs() > CURVE_KAPPA_MIN && log[j].kappa.signum() == sign {
                j += 1;
            }
            out.push(i..j);
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// `(kappa, lane deviation)` pairs from the apex window of every curve
/// traversal in the log.
pub fn apex_dataset(log: &[TelemetryRecord]) -> Result<Vec<(f64, f64)>, DeviationError> {
    let mut out = Vec::new();
    for run in curve_traversals(log) {
        let series: Vec<(f64, f64)> = log[run.clone()].iter().map(|r| (r.t, r.kappa)).collect();
        let Ok(window) = extract_apex_window(&series) else { continue };
        out.extend(log[run.start + window.start..run.start + window.end].iter().map(|r| (r.kappa, lane_deviation(r))));
    }
    if out.is_empty() {
        return Err(DeviationError::NoCurves);
    }
    Ok(out)
}
