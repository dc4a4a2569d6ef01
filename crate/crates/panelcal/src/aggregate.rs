//! Step 1: map a panel's verdicts to a raw probability per item.
//!
//! The default aggregator is the integrated Bayesian one-coin model: judge k
//! gets a Beta(c_k+1, n_k-c_k+1) accuracy posterior from its calibration
//! record and contributes `log(alpha_k/beta_k)` to the posterior log-odds for
//! a positive verdict (the negative of that for a negative verdict). Missing
//! verdicts contribute nothing. Majority vote, accuracy-weighted vote,
//! plug-in log-odds, and one-coin Dawid-Skene EM fill the same role as
//! baselines.

use serde::{Deserialize, Serialize};

use crate::data::{clip, LabelVector, ProbVector, SplitPlan, Stage, Verdict, VoteMatrix};
use crate::opt::sigmoid;
use crate::{Error, Result};

/// Per-judge calibration record and the induced Beta posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeStat {
    /// Non-missing calibration verdicts.
    pub n: u32,
    /// Correct calibration verdicts.
    pub correct: u32,
}

impl JudgeStat {
    pub fn alpha(self) -> f64 {
        f64::from(self.correct) + 1.0
    }

    pub fn beta(self) -> f64 {
        f64::from(self.n - self.correct) + 1.0
    }

    pub fn posterior_mean(self) -> f64 {
        self.alpha() / (self.alpha() + self.beta())
    }

    /// Plug-in accuracy estimate c/n, falling back to 1/2 for judges with no
    /// calibration coverage.
    pub fn plugin_accuracy(self) -> f64 {
        if self.n == 0 {
            0.5
        } else {
            f64::from(self.correct) / f64::from(self.n)
        }
    }
}

/// Calibration statistics for a whole panel, in judge order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeStats {
    stats: Vec<JudgeStat>,
}

impl JudgeStats {
    pub fn new(stats: Vec<JudgeStat>) -> Self {
        JudgeStats { stats }
    }

    pub fn as_slice(&self) -> &[JudgeStat] {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn get(&self, judge: usize) -> JudgeStat {
        self.stats[judge]
    }

    /// Restrict to a judge subset, preserving subset order.
    pub fn subset(&self, judges: &[usize]) -> JudgeStats {
        JudgeStats {
            stats: judges.iter().map(|&k| self.stats[k]).collect(),
        }
    }
}

/// Count per-judge calibration performance over the non-missing cells of the
/// calibration slice. Judges with zero coverage get n = c = 0, hence the
/// neutral Beta(1, 1) posterior.
pub fn fit_judge_stats(
    votes: &VoteMatrix,
    labels: &LabelVector,
    calib_idx: &[usize],
) -> Result<JudgeStats> {
    if calib_idx.is_empty() {
        return Err(Error::invalid("calibration slice is empty".to_string()));
    }
    if labels.len() != votes.n_items() {
        return Err(Error::invalid(format!(
            "{} labels for {} items",
            labels.len(),
            votes.n_items()
        )));
    }
    let mut stats = vec![JudgeStat { n: 0, correct: 0 }; votes.n_judges()];
    for &t in calib_idx {
        let z = labels.get(t);
        for (k, stat) in stats.iter_mut().enumerate() {
            match votes.verdict(t, k) {
                Verdict::Missing => {}
                v => {
                    stat.n += 1;
                    let vote_pos = v == Verdict::Positive;
                    if vote_pos == (z == 1) {
                        stat.correct += 1;
                    }
                }
            }
        }
    }
    Ok(JudgeStats::new(stats))
}

/// Aggregation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMethod {
    Majority,
    AccuracyWeighted,
    LogOdds,
    BayesOneCoin,
    DawidSkene,
}

impl AggMethod {
    pub fn name(self) -> &'static str {
        match self {
            AggMethod::Majority => "majority",
            AggMethod::AccuracyWeighted => "accuracy_weighted",
            AggMethod::LogOdds => "log_odds",
            AggMethod::BayesOneCoin => "bayes_one_coin",
            AggMethod::DawidSkene => "dawid_skene",
        }
    }
}

/// Aggregator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub method: AggMethod,
    /// Class prior used by the plug-in log-odds aggregator.
    pub prior: f64,
    /// Plug-in accuracies are clipped into [clip, 1-clip] before taking
    /// logs, so a perfect calibration record cannot produce infinite weight.
    pub accuracy_clip: f64,
}

impl AggregatorConfig {
    pub fn new(method: AggMethod) -> Self {
        AggregatorConfig {
            method,
            prior: 0.5,
            accuracy_clip: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::invalid(format!("prior must be in (0,1), got {}", self.prior)));
        }
        if !(self.accuracy_clip > 0.0 && self.accuracy_clip < 0.5) {
            return Err(Error::invalid(format!(
                "accuracy_clip must be in (0,0.5), got {}",
                self.accuracy_clip
            )));
        }
        Ok(())
    }
}

/// Fraction of positive verdicts among non-missing judges; 1/2 when the whole
/// row is missing.
pub fn majority_vote(votes_row: &[Verdict]) -> f64 {
    let mut pos = 0usize;
    let mut tot = 0usize;
    for v in votes_row {
        match v {
            Verdict::Positive => {
                pos += 1;
                tot += 1;
            }
            Verdict::Negative => tot += 1,
            Verdict::Missing => {}
        }
    }
    if tot == 0 {
        0.5
    } else {
        pos as f64 / tot as f64
    }
}

/// Posterior probability under known judge accuracies: sigmoid of the prior
/// log-odds plus each non-missing judge's signed log-odds contribution.
/// Accuracies must already be strictly inside (0, 1).
pub fn log_odds_aggregate(votes_row: &[Verdict], accuracies: &[f64], prior: f64) -> f64 {
    debug_assert_eq!(votes_row.len(), accuracies.len());
    let mut log_odds = (prior / (1.0 - prior)).ln();
    for (v, &a) in votes_row.iter().zip(accuracies) {
        log_odds += v.signed() * (a / (1.0 - a)).ln();
    }
    sigmoid(log_odds)
}

/// Integrated Bayesian one-coin posterior: each non-missing judge
/// contributes `+/- log(alpha_k/beta_k)`; the prior term is zero (equal
/// priors).
pub fn bayes_one_coin(votes_row: &[Verdict], stats: &JudgeStats) -> f64 {
    debug_assert_eq!(votes_row.len(), stats.len());
    let mut log_odds = 0.0;
    for (v, stat) in votes_row.iter().zip(stats.as_slice()) {
        log_odds += v.signed() * (stat.alpha() / stat.beta()).ln();
    }
    sigmoid(log_odds)
}

/// Positive-vote fraction weighted by posterior mean accuracy over the
/// non-missing judges; 1/2 when the whole row is missing.
pub fn accuracy_weighted(votes_row: &[Verdict], stats: &JudgeStats) -> f64 {
    debug_assert_eq!(votes_row.len(), stats.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, stat) in votes_row.iter().zip(stats.as_slice()) {
        match v {
            Verdict::Positive => {
                num += stat.posterior_mean();
                den += stat.posterior_mean();
            }
            Verdict::Negative => den += stat.posterior_mean(),
            Verdict::Missing => {}
        }
    }
    if den == 0.0 {
        0.5
    } else {
        num / den
    }
}

/// Result of a one-coin Dawid-Skene EM fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DawidSkeneFit {
    /// Estimated accuracy per panel judge (subset order).
    pub accuracies: Vec<f64>,
    /// Model posterior P(z=1 | votes) per item, from the fitted accuracies.
    pub posteriors: Vec<f64>,
    /// Observed-data log-likelihood after each iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const DS_CLAMP: (f64, f64) = (0.001, 0.999);
const DS_MAX_ITER: usize = 200;
const DS_TOL: f64 = 1e-8;

/// One-coin Dawid-Skene EM on a judge subset.
///
/// The E-step computes item posteriors from current accuracies (log-odds
/// form), the M-step re-estimates accuracies as posterior-weighted agreement
/// rates. Items listed in `pinned` hold their posterior at the given label
/// throughout, which is how labeled calibration items steer the fit; the
/// returned `posteriors` are recomputed from the final accuracies *without*
/// pinning, so downstream calibrators never see raw labels.
pub fn dawid_skene_fit(
    votes: &VoteMatrix,
    judge_subset: &[usize],
    pinned: &[(usize, u8)],
) -> Result<DawidSkeneFit> {
    if votes.n_items() == 0 || votes.n_judges() == 0 {
        return Err(Error::invalid("empty vote matrix".to_string()));
    }
    if judge_subset.is_empty() {
        return Err(Error::invalid("empty judge subset".to_string()));
    }
    for &k in judge_subset {
        if k >= votes.n_judges() {
            return Err(Error::invalid(format!("judge index {k} out of range")));
        }
    }
    let n = votes.n_items();
    let m = judge_subset.len();
    let mut pin = vec![None; n];
    for &(t, z) in pinned {
        if t >= n {
            return Err(Error::invalid(format!("pinned item {t} out of range")));
        }
        pin[t] = Some(z);
    }

    // Item-major subset view of the verdicts.
    let cells: Vec<Verdict> = (0..n)
        .flat_map(|t| judge_subset.iter().map(move |&k| votes.verdict(t, k)))
        .collect();

    // Initial responsibilities from majority vote, with pinned items held at
    // their labels.
    let mut resp: Vec<f64> = (0..n)
        .map(|t| match pin[t] {
            Some(z) => f64::from(z),
            None => majority_vote(&cells[t * m..(t + 1) * m]),
        })
        .collect();

    let m_step = |resp: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.5; m];
        for (j, a) in acc.iter_mut().enumerate() {
            let mut weight = 0.0;
            let mut agree = 0.0;
            for t in 0..n {
                match cells[t * m + j] {
                    Verdict::Missing => {}
                    v => {
                        let mu = resp[t];
                        weight += 1.0;
                        // P(judge correct) = mu if vote positive, 1-mu if negative.
                        agree += if v == Verdict::Positive { mu } else { 1.0 - mu };
                    }
                }
            }
            if weight > 0.0 {
                *a = (agree / weight).clamp(DS_CLAMP.0, DS_CLAMP.1);
            }
        }
        acc
    };

    let posterior_of = |acc: &[f64], t: usize| -> f64 {
        let mut log_odds = 0.0;
        for j in 0..m {
            log_odds += cells[t * m + j].signed() * (acc[j] / (1.0 - acc[j])).ln();
        }
        sigmoid(log_odds)
    };

    let loglik_of = |acc: &[f64]| -> f64 {
        let mut total = 0.0;
        for t in 0..n {
            let mut log_like_pos = 0.0;
            let mut log_like_neg = 0.0;
            for j in 0..m {
                match cells[t * m + j] {
                    Verdict::Positive => {
                        log_like_pos += acc[j].ln();
                        log_like_neg += (1.0 - acc[j]).ln();
                    }
                    Verdict::Negative => {
                        log_like_pos += (1.0 - acc[j]).ln();
                        log_like_neg += acc[j].ln();
                    }
                    Verdict::Missing => {}
                }
            }
            total += match pin[t] {
                Some(1) => log_like_pos,
                Some(_) => log_like_neg,
                None => {
                    // Equal mixture priors, log-sum-exp.
                    let a = log_like_pos + 0.5_f64.ln();
                    let b = log_like_neg + 0.5_f64.ln();
                    let hi = a.max(b);
                    hi + ((a - hi).exp() + (b - hi).exp()).ln()
                }
            };
        }
        total
    };

    let mut accuracies = m_step(&resp);
    let mut trace = vec![loglik_of(&accuracies)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..DS_MAX_ITER {
        iterations += 1;
        for t in 0..n {
            resp[t] = match pin[t] {
                Some(z) => f64::from(z),
                None => posterior_of(&accuracies, t),
            };
        }
        accuracies = m_step(&resp);
        let ll = loglik_of(&accuracies);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() < DS_TOL {
            converged = true;
            break;
        }
    }
    let posteriors = (0..n).map(|t| posterior_of(&accuracies, t)).collect();
    Ok(DawidSkeneFit {
        accuracies,
        posteriors,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

/// Fit the configured aggregator on the plan's aggregator-fit slice and emit
/// raw probabilities for every item, restricted to the given judge subset.
pub fn aggregate_panel(
    config: &AggregatorConfig,
    votes: &VoteMatrix,
    labels: &LabelVector,
    plan: &SplitPlan,
    judge_subset: &[usize],
    eta: f64,
) -> Result<ProbVector> {
    config.validate()?;
    if judge_subset.is_empty() {
        return Err(Error::invalid("empty judge subset".to_string()));
    }
    for &k in judge_subset {
        if k >= votes.n_judges() {
            return Err(Error::invalid(format!("judge index {k} out of range")));
        }
    }
    let fit_idx = plan.agg_fit_idx();
    let n = votes.n_items();
    let row_for = |t: usize| -> Vec<Verdict> {
        judge_subset.iter().map(|&k| votes.verdict(t, k)).collect()
    };

    let raw: Vec<f64> = match config.method {
        AggMethod::Majority => (0..n).map(|t| majority_vote(&row_for(t))).collect(),
        AggMethod::AccuracyWeighted => {
            let stats = fit_judge_stats(votes, labels, fit_idx)?.subset(judge_subset);
            (0..n).map(|t| accuracy_weighted(&row_for(t), &stats)).collect()
        }
        AggMethod::BayesOneCoin => {
            let stats = fit_judge_stats(votes, labels, fit_idx)?.subset(judge_subset);
            (0..n).map(|t| bayes_one_coin(&row_for(t), &stats)).collect()
        }
        AggMethod::LogOdds => {
            let stats = fit_judge_stats(votes, labels, fit_idx)?.subset(judge_subset);
            let accs: Vec<f64> = stats
                .as_slice()
                .iter()
                .map(|s| {
                    s.plugin_accuracy()
                        .clamp(config.accuracy_clip, 1.0 - config.accuracy_clip)
                })
                .collect();
            (0..n)
                .map(|t| log_odds_aggregate(&row_for(t), &accs, config.prior))
                .collect()
        }
        AggMethod::DawidSkene => {
            let pinned: Vec<(usize, u8)> =
                fit_idx.iter().map(|&t| (t, labels.get(t))).collect();
            dawid_skene_fit(votes, judge_subset, &pinned)?.posteriors
        }
    };
    clip(&raw, Stage::Raw, eta)
}
