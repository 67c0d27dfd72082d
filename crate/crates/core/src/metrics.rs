//! Evaluation criteria: SRCC, PLCC and their mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub srcc: f64,
    pub plcc: f64,
    pub main_score: f64,
}

fn check_pair(pred: &[f64], label: &[f64]) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Contract(format!("{} predictions but {} labels", pred.len(), label.len())));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 samples, got {}", pred.len())));
    }
    if pred.iter().chain(label).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite input".into()));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties assigned the average of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of fractional ranks).
pub fn srcc(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pair(pred, label)?;
    pearson(&fractional_ranks(pred), &fractional_ranks(label))
}

/// Pearson linear correlation.
pub fn plcc(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pair(pred, label)?;
    pearson(pred, label)
}

pub fn main_score(pred: &[f64], label: &[f64]) -> Result<EvalMetrics> {
    let s = srcc(pred, label)?;
    let p = plcc(pred, label)?;
    Ok(EvalMetrics { srcc: s, plcc: p, main_score: (s + p) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_reversed() {
        let a = [0.1, 0.7, 0.3, 0.9];
        let m = main_score(&a, &a).unwrap();
        assert_eq!((m.srcc, m.plcc, m.main_score), (1.0, 1.0, 1.0));
        let r: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(srcc(&r, &a).unwrap(), -1.0);
    }

    #[test]
    fn affine_invariance() {
        let label = [1.0, 4.0, 2.0, 8.0, 5.0];
        let pred: Vec<f64> = label.iter().map(|l| 2.0 * l + 5.0).collect();
        assert!((plcc(&pred, &label).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(srcc(&pred, &label).unwrap(), 1.0);
    }

    #[test]
    fn ties_average_ranks() {
        assert_eq!(fractional_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 3.0]), vec![3.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(srcc(&[1.0], &[1.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(srcc(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
    }
}
