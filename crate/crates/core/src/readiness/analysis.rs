use serde::{Deserialize, Serialize};

use super::features::N_CLASSES;
use super::forest::ReadinessModel;
use super::ReadinessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Highest score first.
    pub ranked: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn score(&self, feature: &str) -> Option<f64> {
        self.ranked.iter().find(|f| f.feature == feature).map(|f| f.score)
    }

    /// 0-based position of `feature` in the ranking.
    pub fn rank(&self, feature: &str) -> Option<usize> {
        self.ranked.iter().position(|f| f.feature == feature)
    }
}

/// Mean decrease in Gini impurity. Each tree's decreases are normalised to
/// sum to one before averaging; a forest without splits scores all features
/// equally.
pub fn variable_importance(model: &ReadinessModel) -> ImportanceReport {
    let f = model.schema.len();
    let mut total = vec![0.0; f];
    for tree in &model.trees {
        let dec = tree.impurity_decrease(f);
        let s: f64 = dec.iter().sum();
        if s > 0.0 {
            for (t, d) in total.iter_mut().zip(dec) {
                *t += d / s;
            }
        }
    }
    let s: f64 = total.iter().sum();
    let scores: Vec<f64> = if s > 0.0 { total.iter().map(|t| t / s).collect() } else { vec![1.0 / f as f64; f] };
    let mut ranked: Vec<FeatureImportance> = model
        .schema
        .features
        .iter()
        .zip(scores)
        .map(|(spec, score)| FeatureImportance { feature: spec.name.clone(), score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ImportanceReport { ranked }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub value: f64,
    pub probabilities: [f64; N_CLASSES],
}

/// Mean predicted class probabilities with `feature` overwritten by each grid
/// value in every background row.
pub fn partial_dependence(
    model: &ReadinessModel,
    feature: &str,
    grid: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<DependencePoint>, ReadinessError> {
    let f = model.schema.index_of(feature).ok_or_else(|| ReadinessError::UnknownFeature(feature.to_string()))?;
    if grid.is_empty() {
        return Err(ReadinessError::Params("grid is empty".into()));
    }
    if background.is_empty() {
        return Err(ReadinessError::Params("background is empty".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut row = Vec::new();
    for &value in grid {
        let mut acc = [0.0; N_CLASSES];
        for bg in background {
            row.clone_from(bg);
            row[f] = value;
            let p = model.predict_row(&row).probabilities;
            for c in 0..N_CLASSES {
                acc[c] += p[c];
            }
        }
        for a in &mut acc {
            *a /= background.len() as f64;
        }
        out.push(DependencePoint { value, probabilities: acc });
    }
    Ok(out)
}

/// Grid interval `(lo, hi)` over which `class` probability rises the most.
pub fn steepest_rise(curve: &[DependencePoint], class: usize) -> Option<(f64, f64)> {
    curve
        .windows(2)
        .map(|w| (w[1].probabilities[class] - w[0].probabilities[class], w[0].value, w[1].value))
        .fold(None, |best: Option<(f64, f64, f64)>, c| match best {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
        .map(|(_, lo, hi)| (lo, hi))
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
