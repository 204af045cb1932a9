use serde::{Deserialize, Serialize};

use crate::datapipe::DomainDataset;
use crate::error::{Result, SkdanError};
use crate::model::SkdanModel;

/// Error summary on a labeled set. `score` is the per-sample mean of the
/// asymmetric score; `score_sum` is the plain sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub score: f64,
    pub score_sum: f64,
    /// `ŷ_i − y_i` in sample order.
    pub residuals: Vec<f64>,
    pub n: usize,
}

/// `Σ_{d<0} (e^{−d/1.3} − 1) + Σ_{d≥0} (e^{d} − 1)`: overestimates cost more.
pub fn score_fn(residuals: &[f64]) -> f64 {
    residuals
        .iter()
        .map(|&d| {
            if d < 0.0 {
                (-d / 1.3).exp_m1()
            } else {
                d.exp_m1()
            }
        })
        .sum()
}

/// [`score_fn`] divided by the sample count (0 for no samples).
pub fn score_mean(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        0.0
    } else {
        score_fn(residuals) / residuals.len() as f64
    }
}

pub fn evaluate_predictions(pred: &[f64], labels: &[f64]) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(SkdanError::Data("cannot evaluate on an empty set".into()));
    }
    if pred.len() != labels.len() {
        return Err(SkdanError::Data(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let residuals: Vec<f64> = pred.iter().zip(labels).map(|(p, y)| p - y).collect();
    let n = residuals.len();
    let rmse = (residuals.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
    let mae = residuals.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    Ok(EvalReport {
        rmse,
        mae,
        score: score_mean(&residuals),
        score_sum: score_fn(&residuals),
        residuals,
        n,
    })
}

/// Eval-mode predictions of `model` scored against the labels of `test`.
pub fn evaluate(model: &SkdanModel, test: &DomainDataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(SkdanError::Data("cannot evaluate on an empty set".into()));
    }
    let labels = test
        .labels()
        .ok_or_else(|| SkdanError::Data("evaluation set is not labeled".into()))?;
    let pred = model.predict(&test.inputs())?;
    evaluate_predictions(&pred, &labels)
}
