//! Per-task losses and how they are combined.
//!
//! Three strategies: a plain sum, a fixed weighted sum, and learned
//! homoscedastic-uncertainty weighting
//! `L = sum_i L_i / (2 sigma_i^2) + log sigma_i`, parameterized by
//! `eta_i = log sigma_i^2` so the variance stays positive. In that form the
//! total is `sum_i 0.5 exp(-eta_i) L_i + 0.5 eta_i`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Equal,
    Weighted,
    Uncertainty,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Equal, LossKind::Weighted, LossKind::Uncertainty];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Equal => "equal",
            LossKind::Weighted => "weighted",
            LossKind::Uncertainty => "uncertainty",
        }
    }
}

/// Manual weights in head order: 5.0 for streams and likes, 1.0 for each
/// aesthetic dimension.
pub const DEFAULT_WEIGHTS: [f64; 7] = [5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStrategy {
    pub kind: LossKind,
    pub manual_weights: Vec<f64>,
}

impl LossStrategy {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            manual_weights: DEFAULT_WEIGHTS.to_vec(),
        }
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(CoreError::Config(format!(
                "manual weights must be positive: {weights:?}"
            )));
        }
        Ok(Self {
            kind: LossKind::Weighted,
            manual_weights: weights,
        })
    }
}

/// Result of [`combine_losses`].
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub total: f64,
    /// Factor applied to each task's prediction gradients.
    pub task_scale: Vec<f64>,
    /// `d total / d eta_i`, uncertainty strategy only.
    pub dtotal_deta: Option<Vec<f64>>,
}

/// Mean squared error over a batch and its gradient `2 (pred - target) / B`.
pub fn task_mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    CoreError::check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(CoreError::Empty("batch"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn combine_losses(
    losses: &[f64],
    strategy: &LossStrategy,
    log_variance: Option<&[f64]>,
) -> Result<Combined> {
    match (strategy.kind, log_variance) {
        (LossKind::Uncertainty, None) => {
            return Err(CoreError::Uncertainty("uncertainty strategy needs log-variances".into()))
        }
        (LossKind::Equal | LossKind::Weighted, Some(_)) => {
            return Err(CoreError::Uncertainty(format!(
                "{} strategy takes no log-variances",
                strategy.kind.as_str()
            )))
        }
        _ => {}
    }
    match strategy.kind {
        LossKind::Equal => Ok(Combined {
            total: losses.iter().sum(),
            task_scale: vec![1.0; losses.len()],
            dtotal_deta: None,
        }),
        LossKind::Weighted => {
            if strategy.manual_weights.len() < losses.len() {
                return Err(CoreError::LengthMismatch {
                    expected: losses.len(),
                    actual: strategy.manual_weights.len(),
                });
            }
            let w = &strategy.manual_weights[..losses.len()];
            Ok(Combined {
                total: losses.iter().zip(w).map(|(l, w)| w * l).sum(),
                task_scale: w.to_vec(),
                dtotal_deta: None,
            })
        }
        LossKind::Uncertainty => {
            let eta = log_variance.expect("checked above");
            if eta.len() != losses.len() {
                return Err(CoreError::Uncertainty(format!(
                    "{} log-variances for {} tasks",
                    eta.len(),
                    losses.len()
                )));
            }
            let scale: Vec<f64> = eta.iter().map(|e| 0.5 * libm::exp(-e)).collect();
            let total = losses
                .iter()
                .zip(&scale)
                .zip(eta)
                .map(|((l, s), e)| s * l + 0.5 * e)
                .sum();
            let deta = losses.iter().zip(&scale).map(|(l, s)| -s * l + 0.5).collect();
            Ok(Combined {
                total,
                task_scale: scale,
                dtotal_deta: Some(deta),
            })
        }
    }
}
