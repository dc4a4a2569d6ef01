//! Step 4: split conformal prediction sets over calibrated probabilities.
//!
//! Nonconformity of a labeled item is one minus the probability assigned to
//! its true label. The threshold is the `ceil((1-alpha)(n+1))`-th smallest
//! score on a conformal slice disjoint from everything used to fit Steps
//! 1-3; when that index overflows the slice, the model is saturated and
//! every prediction set contains both labels.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fitted split-conformal threshold at one target coverage level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    /// Score threshold; `None` means saturated (sets always contain both
    /// labels).
    pub q_hat: Option<f64>,
    /// Target coverage `1 - alpha`.
    pub level: f64,
    /// Size of the conformal calibration slice.
    pub n_conf: usize,
}

/// Nonconformity score `1 - p(z)`: low when the model was confident in the
/// true label.
pub fn nonconformity(p_final: f64, z: u8) -> f64 {
    if z == 1 {
        1.0 - p_final
    } else {
        p_final
    }
}

/// Fit the conformal threshold: the k-th smallest score with
/// `k = ceil((1-alpha)(n+1))`, saturated when `k > n`.
pub fn fit_conformal(scores: &[f64], alpha: f64) -> Result<ConformalModel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0,1), got {alpha}")));
    }
    if scores.is_empty() {
        return Err(Error::invalid("empty conformal slice".to_string()));
    }
    let n = scores.len();
    let k = ((1.0 - alpha) * (n as f64 + 1.0)).ceil() as usize;
    let q_hat = if k > n {
        None
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Some(sorted[k - 1])
    };
    Ok(ConformalModel {
        q_hat,
        level: 1.0 - alpha,
        n_conf: n,
    })
}

/// A conformal prediction set over the binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub contains_zero: bool,
    pub contains_one: bool,
}

impl PredictionSet {
    pub fn size(self) -> usize {
        usize::from(self.contains_zero) + usize::from(self.contains_one)
    }

    pub fn contains(self, z: u8) -> bool {
        if z == 1 {
            self.contains_one
        } else {
            self.contains_zero
        }
    }
}

/// The prediction set for one item: each label is included when its
/// nonconformity is at or below the threshold. Empty sets are legal output.
pub fn prediction_set(model: &ConformalModel, p_final: f64) -> PredictionSet {
    match model.q_hat {
        None => PredictionSet {
            contains_zero: true,
            contains_one: true,
        },
        Some(q) => PredictionSet {
            contains_zero: nonconformity(p_final, 0) <= q,
            contains_one: nonconformity(p_final, 1) <= q,
        },
    }
}
