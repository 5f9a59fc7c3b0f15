//! Regression and classification metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::average_ranks;
use crate::network::PredictionVector;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mse: f64,
    pub mae: f64,
    pub pearson: f64,
    pub spearman: f64,
}

/// Per-dimension mean of segment predictions.
pub fn aggregate_song_predictions(per_segment: &[PredictionVector]) -> Result<PredictionVector> {
    let rows: Vec<Vec<f64>> = per_segment.iter().map(PredictionVector::to_vec).collect();
    Ok(PredictionVector::from_slice(&mean_rows(&rows)?))
}

/// Column means of equally long rows.
pub fn mean_rows(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(CoreError::Empty("segment predictions"))?;
    let mut acc = alloc::vec![0.0; first.len()];
    for r in rows {
        CoreError::check_len(acc.len(), r.len())?;
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn mse_mae(preds: &[f64], targets: &[f64]) -> Result<(f64, f64)> {
    CoreError::check_len(preds.len(), targets.len())?;
    if preds.is_empty() {
        return Err(CoreError::Empty("predictions"));
    }
    let n = preds.len() as f64;
    let (se, ae) = preds.iter().zip(targets).fold((0.0, 0.0), |(se, ae), (p, t)| {
        let d = p - t;
        (se + d * d, ae + d.abs())
    });
    Ok((se / n, ae / n))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    CoreError::check_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(CoreError::TooFewRecords {
            need: 2,
            have: x.len(),
        });
    }
    Ok(())
}

/// Sample Pearson correlation. Constant inputs are an error, never 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let mx = crate::math::mean(x);
    let my = crate::math::mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CoreError::UndefinedCorrelation("x"));
    }
    if syy == 0.0 {
        return Err(CoreError::UndefinedCorrelation("y"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn regression_report(preds: &[f64], targets: &[f64]) -> Result<RegressionReport> {
    let (mse, mae) = mse_mae(preds, targets)?;
    Ok(RegressionReport {
        mse,
        mae,
        pearson: pearson(preds, targets)?,
        spearman: spearman(preds, targets)?,
    })
}

/// ROC AUC in its Mann-Whitney form: the probability that a positive
/// outscores a negative, ties counting one half. Computed from average ranks
/// in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    CoreError::check_len(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * q))
}

/// F1 for one class; 0 when precision and recall are both 0.
pub fn f1(predictions: &[bool], labels: &[bool], positive: bool) -> Result<f64> {
    CoreError::check_len(labels.len(), predictions.len())?;
    if labels.is_empty() {
        return Err(CoreError::Empty("labels"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        match (*p == positive, *l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    Ok(0.5 * (f1(predictions, labels, true)? + f1(predictions, labels, false)?))
}
