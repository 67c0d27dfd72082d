//! Training objectives with analytic gradients with respect to the predictions.
//!
//! The IQA branch regresses each frame score onto the label with smooth L1.
//! The VQA branch is trained on whole batches with a correlation loss plus a
//! pairwise ranking hinge, balanced by `beta`.

use crate::error::{Error, Result};

/// Default weight of the ranking term in [`combined_vqa_loss`].
pub const DEFAULT_BETA: f64 = 0.3;

/// Predictions paired with labels for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchScores {
    predictions: Vec<f64>,
    labels: Vec<f64>,
    pred_mean: f64,
    label_mean: f64,
}

impl BatchScores {
    pub fn new(predictions: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!("{} predictions but {} labels", predictions.len(), labels.len())));
        }
        if predictions.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite score in batch".into()));
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Ok(BatchScores { pred_mean: mean(&predictions), label_mean: mean(&labels), predictions, labels })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn pred_mean(&self) -> f64 {
        self.pred_mean
    }

    pub fn label_mean(&self) -> f64 {
        self.label_mean
    }

    fn require_pairs(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::DegenerateBatch(format!("batch of {} cannot form pairs", self.len())));
        }
        Ok(())
    }
}

/// A loss value and its gradient with respect to each prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Smooth L1 of `d = label - pred`; returns `(loss, d loss / d pred)`.
pub fn smooth_l1(pred: f64, label: f64) -> (f64, f64) {
    let d = label - pred;
    if d.abs() < 1.0 {
        (0.5 * d * d, -d)
    } else {
        (d.abs() - 0.5, -d.signum())
    }
}

/// `(1 - r) / 2` with `r` the Pearson correlation of predictions and labels.
///
/// Zero-variance predictions or labels make `r` undefined and are reported as
/// a degenerate batch so the caller can skip it.
pub fn plcc_loss(b: &BatchScores) -> Result<LossValue> {
    b.require_pairs()?;
    let xs: Vec<f64> = b.predictions.iter().map(|p| p - b.pred_mean).collect();
    let ys: Vec<f64> = b.labels.iter().map(|l| l - b.label_mean).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    if sxx <= f64::MIN_POSITIVE || syy <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateBatch(format!(
            "zero variance in {}",
            if sxx <= f64::MIN_POSITIVE { "predictions" } else { "labels" }
        )));
    }
    let norm = (sxx * syy).sqrt();
    let r = (sxy / norm).clamp(-1.0, 1.0);
    // dr/dx_i = y_i / sqrt(sxx syy) - r x_i / sxx (centering terms cancel)
    let grad = xs.iter().zip(&ys).map(|(x, y)| -0.5 * (y / norm - r * x / sxx)).collect();
    Ok(LossValue { value: (1.0 - r) / 2.0, grad })
}

/// Pairwise ranking hinge averaged over all `m^2` ordered pairs.
///
/// For each pair the margin is the label gap `|y_i - y_j|`, and the sign
/// `e = +1` when `y_i >= y_j` (ties included), `-1` otherwise.
pub fn rank_loss(b: &BatchScores) -> Result<LossValue> {
    b.require_pairs()?;
    let m = b.len();
    let scale = 1.0 / (m * m) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let h = rank_hinge_argument(b, i, j);
            if h > 0.0 {
                let e = if b.labels[i] >= b.labels[j] { 1.0 } else { -1.0 };
                value += h;
                grad[i] -= e * scale;
                grad[j] += e * scale;
            }
        }
    }
    Ok(LossValue { value: value * scale, grad })
}

/// `|y_i - y_j| - e(y_i, y_j) (p_i - p_j)`, the argument of the hinge for pair `(i, j)`.
pub fn rank_hinge_argument(b: &BatchScores, i: usize, j: usize) -> f64 {
    let (yi, yj) = (b.labels[i], b.labels[j]);
    let e = if yi >= yj { 1.0 } else { -1.0 };
    (yi - yj).abs() - e * (b.predictions[i] - b.predictions[j])
}

/// `plcc_loss + beta * rank_loss`.
pub fn combined_vqa_loss(b: &BatchScores, beta: f64) -> Result<LossValue> {
    let p = plcc_loss(b)?;
    let r = rank_loss(b)?;
    Ok(LossValue {
        value: p.value + beta * r.value,
        grad: p.grad.iter().zip(&r.grad).map(|(a, c)| a + beta * c).collect(),
    })
}
