//! Binary cross-entropy on sigmoid outputs.

use crate::error::{Result, SorError};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

fn check(pred: &[f64], labels: &[f64]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(SorError::dim(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.is_empty() {
        return Err(SorError::invalid("loss over an empty batch"));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(SorError::invalid(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}

/// Per-example loss `-[y ln p + (1 - y) ln(1 - p)]` on the clamped prediction.
pub fn bce_single(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_single`] with respect to `p`; zero where the clamp is active.
pub fn bce_single_grad(p: f64, y: f64) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p) {
        return 0.0;
    }
    (p - y) / (p * (1.0 - p))
}

/// Mean binary cross-entropy.
pub fn bce_loss(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check(pred, labels)?;
    let total: f64 = pred.iter().zip(labels).map(|(&p, &y)| bce_single(p, y)).sum();
    Ok(total / pred.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to every prediction.
pub fn bce_grad(pred: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check(pred, labels)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_single_grad(p, y) / n)
        .collect())
}


/// Task losses the engine can differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Binary cross-entropy on a single sigmoid output.
    Bce,
    /// `0.5 * sum (pred - target)^2` per sample.
    SquaredError,
}

impl LossKind {
    /// Per-sample loss for one output vector.
    pub fn sample_loss(self, pred: &[f64], target: &[f64]) -> f64 {
        match self {
            LossKind::Bce => pred.iter().zip(target).map(|(&p, &y)| bce_single(p, y)).sum(),
            LossKind::SquaredError => pred.iter().zip(target).map(|(p, t)| 0.5 * (p - t) * (p - t)).sum(),
        }
    }

    /// Derivative of [`Self::sample_loss`] with respect to `pred`.
    pub fn sample_grad(self, pred: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Bce => pred.iter().zip(target).map(|(&p, &y)| bce_single_grad(p, y)).collect(),
            LossKind::SquaredError => pred.iter().zip(target).map(|(p, t)| p - t).collect(),
        }
    }
}
