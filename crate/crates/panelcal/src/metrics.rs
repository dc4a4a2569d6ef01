//! Evaluation metrics: proper scoring rules (NLL, Brier), expected
//! calibration error over 10 equal-width confidence bins, point accuracy,
//! conformal coverage and set size, selective-prediction AUAC, Spearman rank
//! correlation, reliability bin tables, and judge-agreement difficulty
//! strata.
//!
//! Conventions: natural-log NLL; confidence is `max(p, 1-p)`; a tie at
//! p = 0.5 predicts label 1; all metrics are invariant to item order.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::data::{LabelVector, ProbVector, VoteMatrix};
use crate::{Error, Result};

/// Per-arm metric bundle: one row of the experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub accuracy: f64,
    /// (target level, empirical coverage, mean set size) per conformal level.
    pub conformal: Vec<(f64, f64, f64)>,
    pub auac: f64,
    pub n_items: usize,
}

fn check_lengths(p: &ProbVector, labels: &LabelVector) -> Result<()> {
    if p.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            p.len(),
            labels.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("empty metric input".to_string()));
    }
    Ok(())
}

/// Bernoulli log-loss of one prediction, natural log.
pub fn log_loss(p: f64, z: u8) -> f64 {
    if z == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean Bernoulli log-loss.
pub fn nll(p: &ProbVector, labels: &LabelVector) -> Result<f64> {
    check_lengths(p, labels)?;
    let total: f64 = p
        .values()
        .iter()
        .zip(labels.as_slice())
        .map(|(&pt, &z)| log_loss(pt, z))
        .sum();
    Ok(total / p.len() as f64)
}

/// Mean squared error against the label.
pub fn brier(p: &ProbVector, labels: &LabelVector) -> Result<f64> {
    check_lengths(p, labels)?;
    let total: f64 = p
        .values()
        .iter()
        .zip(labels.as_slice())
        .map(|(&pt, &z)| (pt - f64::from(z)) * (pt - f64::from(z)))
        .sum();
    Ok(total / p.len() as f64)
}

fn confidence(p: f64) -> f64 {
    p.max(1.0 - p)
}

fn predicted_label(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// One reliability bin: item count, mean confidence, mean accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

/// The ECE bin table over `n_bins` equal-width confidence bins on [0, 1],
/// right-open except the last. Empty bins report zeros.
pub fn reliability_bins(
    p: &ProbVector,
    labels: &LabelVector,
    n_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive".to_string()));
    }
    if p.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            p.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0; n_bins];
    let mut acc_sums = vec![0.0; n_bins];
    for (&pt, &z) in p.values().iter().zip(labels.as_slice()) {
        let conf = confidence(pt);
        let bin = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
        conf_sums[bin] += conf;
        acc_sums[bin] += f64::from(predicted_label(pt) == z);
    }
    Ok((0..n_bins)
        .map(|b| ReliabilityBin {
            count: counts[b],
            mean_conf: if counts[b] > 0 { conf_sums[b] / counts[b] as f64 } else { 0.0 },
            mean_acc: if counts[b] > 0 { acc_sums[b] / counts[b] as f64 } else { 0.0 },
        })
        .collect())
}

/// Expected calibration error over 10 equal-width confidence bins.
pub fn ece(p: &ProbVector, labels: &LabelVector) -> Result<f64> {
    check_lengths(p, labels)?;
    let bins = reliability_bins(p, labels, 10)?;
    let n = p.len() as f64;
    Ok(bins
        .iter()
        .map(|b| (b.count as f64 / n) * (b.mean_acc - b.mean_conf).abs())
        .sum())
}

/// Point accuracy of thresholding at 0.5, ties predicting 1.
pub fn accuracy(p: &ProbVector, labels: &LabelVector) -> Result<f64> {
    check_lengths(p, labels)?;
    let hits = p
        .values()
        .iter()
        .zip(labels.as_slice())
        .filter(|&(&pt, &z)| predicted_label(pt) == z)
        .count();
    Ok(hits as f64 / p.len() as f64)
}

/// Empirical coverage and mean size of conformal prediction sets.
pub fn coverage_and_size(sets: &[PredictionSet], labels: &LabelVector) -> Result<(f64, f64)> {
    if sets.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} sets for {} labels",
            sets.len(),
            labels.len()
        )));
    }
    if sets.is_empty() {
        return Err(Error::invalid("empty metric input".to_string()));
    }
    let n = sets.len() as f64;
    let covered = sets
        .iter()
        .zip(labels.as_slice())
        .filter(|&(s, &z)| s.contains(z))
        .count();
    let total_size: usize = sets.iter().map(|s| s.size()).sum();
    Ok((covered as f64 / n, total_size as f64 / n))
}

/// Area under the accuracy-coverage curve of selective prediction.
///
/// Items are retained in order of descending confidence (ties pooled: a
/// confidence threshold either keeps a whole tie group or none of it, with
/// the sort made deterministic by original index). The area is the
/// coverage-weighted sum of retained-set accuracies over the distinct
/// confidence levels.
pub fn auac(p: &ProbVector, labels: &LabelVector) -> Result<f64> {
    check_lengths(p, labels)?;
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        confidence(p.get(j))
            .total_cmp(&confidence(p.get(i)))
            .then(i.cmp(&j))
    });
    let mut area = 0.0;
    let mut hits = 0usize;
    let mut idx = 0usize;
    let mut prev_coverage = 0.0;
    while idx < n {
        // Consume a whole tie group of equal confidence.
        let group_conf = confidence(p.get(order[idx]));
        while idx < n && confidence(p.get(order[idx])) == group_conf {
            let t = order[idx];
            if predicted_label(p.get(t)) == labels.get(t) {
                hits += 1;
            }
            idx += 1;
        }
        let coverage = idx as f64 / n as f64;
        let prefix_acc = hits as f64 / idx as f64;
        area += prefix_acc * (coverage - prev_coverage);
        prev_coverage = coverage;
    }
    Ok(area)
}

/// Spearman rank correlation with average ranks for ties. A constant
/// sequence has undefined ranks; by convention that returns zero with the
/// degenerate flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankCorrelation {
    pub rho: f64,
    pub degenerate: bool,
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<RankCorrelation> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rank correlation over {} vs {} scores",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("need at least two scores".to_string()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(RankCorrelation { rho: 0.0, degenerate: true });
    }
    Ok(RankCorrelation {
        rho: cov / (var_a.sqrt() * var_b.sqrt()),
        degenerate: false,
    })
}

/// Item difficulty stratum by judge agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Hard,
    Mid,
    Easy,
}

/// Partition items into agreement terciles: agreement is the larger vote
/// fraction over non-missing judges (1/2 for all-missing items), and ties at
/// a tercile edge go to the lower stratum.
pub fn agreement_strata(votes: &VoteMatrix) -> Vec<Stratum> {
    let n = votes.n_items();
    let agreements: Vec<f64> = (0..n).map(|t| votes.agreement(t)).collect();
    let mut sorted = agreements.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |frac: f64| -> f64 {
        let pos = frac * (n as f64 - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    let t33 = q(1.0 / 3.0);
    let t67 = q(2.0 / 3.0);
    agreements
        .iter()
        .map(|&a| {
            if a <= t33 {
                Stratum::Hard
            } else if a <= t67 {
                Stratum::Mid
            } else {
                Stratum::Easy
            }
        })
        .collect()
}
