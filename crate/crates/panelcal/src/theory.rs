//! Executable oracles for the one-coin theory: exact oracle-calibrated risks
//! by pattern enumeration, the calibrated jury bound and its empirical error,
//! Hoeffding exponents for weighted vs. majority voting, monotone-distortion
//! checks, and the synthetic panel generator used throughout the test suite.
//!
//! The enumeration code here is deliberately independent of the `aggregate`
//! module: the two must agree on synthetic data, and that agreement is itself
//! a test.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_isotonic, fit_isotonic};
use crate::data::{clip, stream_rng, LabelVector, Stage, Verdict, VoteMatrix};
use crate::opt::sigmoid;
use crate::{Error, Result};

/// Maximum subset size for exact pattern enumeration (2^20 patterns).
pub const ENUM_GUARD: usize = 20;

/// A panel of judges with known accuracies under the one-coin model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePanel {
    accuracies: Vec<f64>,
    prior: f64,
}

impl OraclePanel {
    pub fn new(accuracies: Vec<f64>, prior: f64) -> Result<Self> {
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::invalid(format!("prior must be in (0,1), got {prior}")));
        }
        for &p in &accuracies {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!(
                    "judge accuracy must be in (0,1), got {p}"
                )));
            }
        }
        Ok(OraclePanel { accuracies, prior })
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }
}

/// Exact Bayes risks of the oracle-calibrated predictor on a judge subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRisk {
    /// Conditional entropy H(Y | X_S) in nats.
    pub nll_risk: f64,
    /// Expected conditional variance E[Var(Y | X_S)].
    pub brier_risk: f64,
    pub subset: Vec<usize>,
}

fn binary_entropy(q: f64) -> f64 {
    let mut h = 0.0;
    if q > 0.0 {
        h -= q * q.ln();
    }
    if q < 1.0 {
        h -= (1.0 - q) * (1.0 - q).ln();
    }
    h
}

/// Exact oracle risks by enumerating all `2^|subset|` vote patterns of the
/// one-coin joint law. Log-space products keep K = 20 from underflowing.
pub fn oracle_risk(panel: &OraclePanel, subset: &[usize]) -> Result<OracleRisk> {
    if subset.len() > ENUM_GUARD {
        return Err(Error::Guard(format!(
            "subset of {} judges exceeds the enumeration guard of {ENUM_GUARD}",
            subset.len()
        )));
    }
    for &k in subset {
        if k >= panel.len() {
            return Err(Error::invalid(format!("judge index {k} out of range")));
        }
    }
    let pi = panel.prior;
    let m = subset.len();
    let log_p: Vec<f64> = subset.iter().map(|&k| panel.accuracies[k].ln()).collect();
    let log_q: Vec<f64> = subset
        .iter()
        .map(|&k| (1.0 - panel.accuracies[k]).ln())
        .collect();

    let mut nll = 0.0;
    let mut brier = 0.0;
    for pattern in 0u64..(1u64 << m) {
        // Bit j set = judge subset[j] votes positive.
        let mut log_like_pos = 0.0;
        let mut log_like_neg = 0.0;
        for j in 0..m {
            if pattern >> j & 1 == 1 {
                log_like_pos += log_p[j];
                log_like_neg += log_q[j];
            } else {
                log_like_pos += log_q[j];
                log_like_neg += log_p[j];
            }
        }
        let joint_pos = pi.ln() + log_like_pos;
        let joint_neg = (1.0 - pi).ln() + log_like_neg;
        let max = joint_pos.max(joint_neg);
        let log_marginal = max + ((joint_pos - max).exp() + (joint_neg - max).exp()).ln();
        let p_pattern = log_marginal.exp();
        let posterior = (joint_pos - log_marginal).exp();
        nll += p_pattern * binary_entropy(posterior);
        brier += p_pattern * posterior * (1.0 - posterior);
    }
    Ok(OracleRisk {
        nll_risk: nll,
        brier_risk: brier,
        subset: subset.to_vec(),
    })
}

/// The calibrated jury bound: per-judge contributions
/// `C_k = -1/2 log(1 - (2 p_k - 1)^2)` and the error bound
/// `1/2 exp(-sum C_k)`. Judges at exactly 1/2 contribute zero.
pub fn cjt_bound(panel: &OraclePanel) -> (f64, Vec<f64>) {
    let contributions: Vec<f64> = panel
        .accuracies
        .iter()
        .map(|&p| {
            let d = 2.0 * p - 1.0;
            -0.5 * (1.0 - d * d).ln()
        })
        .collect();
    let total: f64 = contributions.iter().sum();
    (0.5 * (-total).exp(), contributions)
}

/// How to evaluate the weighted-vote error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    Enumerate,
    MonteCarlo,
}

/// Error rate of the optimally weighted sign rule
/// `sign(sum_k log(p_k/(1-p_k)) x_k)` with ties broken toward +1.
///
/// Exact enumeration for panels within the guard; Monte Carlo otherwise.
pub fn cjt_empirical_error(
    panel: &OraclePanel,
    mode: ErrorMode,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let k = panel.len();
    let weights: Vec<f64> = panel
        .accuracies
        .iter()
        .map(|&p| (p / (1.0 - p)).ln())
        .collect();
    match mode {
        ErrorMode::Enumerate => {
            if k > ENUM_GUARD {
                return Err(Error::Guard(format!(
                    "panel of {k} judges exceeds the enumeration guard of {ENUM_GUARD}"
                )));
            }
            let log_p: Vec<f64> = panel.accuracies.iter().map(|&p| p.ln()).collect();
            let log_q: Vec<f64> = panel.accuracies.iter().map(|&p| (1.0 - p).ln()).collect();
            let mut err_given_pos = 0.0;
            let mut err_given_neg = 0.0;
            for pattern in 0u64..(1u64 << k) {
                let mut score = 0.0;
                let mut log_like_pos = 0.0;
                let mut log_like_neg = 0.0;
                for j in 0..k {
                    if pattern >> j & 1 == 1 {
                        score += weights[j];
                        log_like_pos += log_p[j];
                        log_like_neg += log_q[j];
                    } else {
                        score -= weights[j];
                        log_like_pos += log_q[j];
                        log_like_neg += log_p[j];
                    }
                }
                let decide_pos = score >= 0.0;
                if !decide_pos {
                    err_given_pos += log_like_pos.exp();
                }
                if decide_pos {
                    err_given_neg += log_like_neg.exp();
                }
            }
            Ok(panel.prior * err_given_pos + (1.0 - panel.prior) * err_given_neg)
        }
        ErrorMode::MonteCarlo => {
            if n_draws == 0 {
                return Err(Error::invalid("n_draws must be positive".to_string()));
            }
            let mut rng = stream_rng(seed, 0x6a75_7279);
            let mut errors = 0usize;
            for _ in 0..n_draws {
                let truth_pos = rng.gen::<f64>() < panel.prior;
                let mut score = 0.0;
                for j in 0..k {
                    let correct = rng.gen::<f64>() < panel.accuracies[j];
                    let vote_pos = correct == truth_pos;
                    score += if vote_pos { weights[j] } else { -weights[j] };
                }
                let decide_pos = score >= 0.0;
                if decide_pos != truth_pos {
                    errors += 1;
                }
            }
            Ok(errors as f64 / n_draws as f64)
        }
    }
}

/// Hoeffding error exponents for the log-odds-weighted vote (`E_w`) and the
/// unweighted majority vote (`E_mv`).
pub fn hoeffding_exponents(panel: &OraclePanel) -> (f64, f64) {
    let k = panel.len() as f64;
    let mut num_w = 0.0;
    let mut den_w = 0.0;
    let mut num_mv = 0.0;
    for &p in &panel.accuracies {
        let margin = 2.0 * p - 1.0;
        let w = (p / (1.0 - p)).ln();
        num_w += margin * w;
        den_w += w * w;
        num_mv += margin;
    }
    let e_w = if den_w > 0.0 { num_w * num_w / (2.0 * den_w) } else { 0.0 };
    let e_mv = num_mv * num_mv / (2.0 * k);
    (e_w, e_mv)
}

/// Score distortions for the rank-robustness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    Square,
    Sqrt,
    Invert,
    Shuffle,
}

/// Held-out NLL of isotonic-calibrated clean vs. distorted score streams.
///
/// Scores are the exact one-coin posteriors of simulated panel votes, so the
/// clean stream is perfectly calibrated by construction. Isotonic calibration
/// here fits both orientations and keeps the better in-sample one, which is
/// what makes the inverted stream recoverable.
pub fn monotone_distortion_check(
    panel: &OraclePanel,
    distortion: Distortion,
    n_items: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_items < 8 {
        return Err(Error::invalid("need at least 8 items".to_string()));
    }
    let mut rng = stream_rng(seed, 0x6d6f_6e6f);
    let k = panel.len();
    let weights: Vec<f64> = panel
        .accuracies
        .iter()
        .map(|&p| (p / (1.0 - p)).ln())
        .collect();
    let prior_term = (panel.prior / (1.0 - panel.prior)).ln();

    let mut scores = Vec::with_capacity(n_items);
    let mut labels = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let truth_pos = rng.gen::<f64>() < panel.prior;
        let mut log_odds = prior_term;
        for j in 0..k {
            let correct = rng.gen::<f64>() < panel.accuracies[j];
            let vote_pos = correct == truth_pos;
            log_odds += if vote_pos { weights[j] } else { -weights[j] };
        }
        // A hair of jitter breaks score ties so both streams see the same
        // rank structure; it is orders of magnitude below the signal.
        let p = (sigmoid(log_odds) + 1e-9 * rng.gen::<f64>()).clamp(1e-12, 1.0 - 1e-12);
        scores.push(p);
        labels.push(u8::from(truth_pos));
    }

    let distorted: Vec<f64> = match distortion {
        Distortion::Square => scores.iter().map(|&s| s * s).collect(),
        Distortion::Sqrt => scores.iter().map(|&s| s.sqrt()).collect(),
        Distortion::Invert => scores.iter().map(|&s| 1.0 - s).collect(),
        Distortion::Shuffle => {
            let mut idx: Vec<usize> = (0..n_items).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            idx.iter().map(|&i| scores[i]).collect()
        }
    };

    let half = n_items / 2;
    let fit_idx: Vec<usize> = (0..half).collect();
    // A tiny clip floor: large enough for finite losses, small enough that
    // clipping never collapses distinct distorted scores into ties.
    let eta = 1e-12;
    let labels = LabelVector::new(labels)?;
    let holdout_nll = |calibrated: &crate::data::ProbVector| -> f64 {
        let mut total = 0.0;
        for t in half..n_items {
            let p = calibrated.get(t);
            total -= if labels.get(t) == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        total / (n_items - half) as f64
    };
    let train_nll = |calibrated: &crate::data::ProbVector| -> f64 {
        fit_idx
            .iter()
            .map(|&t| {
                let p = calibrated.get(t);
                if labels.get(t) == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / fit_idx.len() as f64
    };
    // Rank-only calibration: fit isotonic in both orientations and keep the
    // one with the better in-sample fit, so decreasing distortions (invert)
    // are recoverable.
    let nll_of = |stream: &[f64]| -> Result<f64> {
        let forward = clip(stream, Stage::Raw, eta)?;
        let mirrored: Vec<f64> = stream.iter().map(|&s| 1.0 - s).collect();
        let reverse = clip(&mirrored, Stage::Raw, eta)?;
        let fwd_cal = apply_isotonic(&fit_isotonic(&forward, &labels, &fit_idx)?, &forward)?;
        let rev_cal = apply_isotonic(&fit_isotonic(&reverse, &labels, &fit_idx)?, &reverse)?;
        if train_nll(&fwd_cal) <= train_nll(&rev_cal) {
            Ok(holdout_nll(&fwd_cal))
        } else {
            Ok(holdout_nll(&rev_cal))
        }
    };
    Ok((nll_of(&scores)?, nll_of(&distorted)?))
}

/// How to assign per-judge accuracies when generating a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracySpec {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

/// Generate a one-coin synthetic panel: labels are Bernoulli(prior), votes
/// are conditionally independent given the label, and everything is a pure
/// function of the seed. Accuracies are clamped into [0.001, 0.999].
pub fn synth_panel(
    n_judges: usize,
    spec: &AccuracySpec,
    n_items: usize,
    prior: f64,
    seed: u64,
) -> Result<(VoteMatrix, LabelVector, OraclePanel)> {
    if n_judges == 0 || n_items == 0 {
        return Err(Error::invalid("panel needs at least one judge and one item".to_string()));
    }
    let mut rng = stream_rng(seed, 0x7379_6e74);
    let accuracies: Vec<f64> = match spec {
        AccuracySpec::Constant(a) => vec![*a; n_judges],
        AccuracySpec::Uniform { lo, hi } => {
            (0..n_judges).map(|_| rng.gen_range(*lo..*hi)).collect()
        }
        AccuracySpec::Explicit(list) => {
            if list.len() != n_judges {
                return Err(Error::invalid(format!(
                    "{} explicit accuracies for {} judges",
                    list.len(),
                    n_judges
                )));
            }
            list.clone()
        }
    };
    let accuracies: Vec<f64> = accuracies
        .into_iter()
        .map(|a| a.clamp(0.001, 0.999))
        .collect();
    let panel = OraclePanel::new(accuracies.clone(), prior)?;

    let mut labels = Vec::with_capacity(n_items);
    let mut verdicts = Vec::with_capacity(n_items * n_judges);
    for _ in 0..n_items {
        let z: u8 = u8::from(rng.gen::<f64>() < prior);
        labels.push(z);
        for &a in &accuracies {
            let correct = rng.gen::<f64>() < a;
            let vote_pos = correct == (z == 1);
            verdicts.push(if vote_pos { Verdict::Positive } else { Verdict::Negative });
        }
    }
    let judge_ids = (0..n_judges).map(|k| format!("j{k:03}")).collect();
    let votes = VoteMatrix::new(n_items, n_judges, verdicts, judge_ids, None)?;
    Ok((votes, LabelVector::new(labels)?, panel))
}

/// Configuration of the narrow-band heterogeneity ablation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrowBandConfig {
    pub n_judges: usize,
    pub n_items: usize,
    pub mean_accuracy: f64,
    pub n_replicates: usize,
    pub prior: f64,
    pub seed: u64,
}

impl Default for NarrowBandConfig {
    fn default() -> Self {
        NarrowBandConfig {
            n_judges: 30,
            n_items: 2000,
            mean_accuracy: 0.70,
            n_replicates: 100,
            prior: 0.5,
            seed: 7,
        }
    }
}

/// One row of the narrow-band sweep: point accuracy of the full-panel
/// log-odds vote versus accuracy-ranked pruning at half and one-third size.
#[derive(Debug, Clone, Serialize)]
pub struct NarrowBandRow {
    pub sigma: f64,
    pub full_panel_acc: f64,
    pub top_half_acc: f64,
    pub top_third_acc: f64,
}

/// Sweep the cross-judge accuracy spread and compare full-panel log-odds
/// voting against pruning rules. Judge accuracies are drawn from
/// `N(mean, sigma^2)` truncated into (0.02, 0.98); weights use the true
/// accuracies, and ties in the sign rule break toward the positive label.
pub fn narrow_band_experiment(
    sigma_grid: &[f64],
    config: &NarrowBandConfig,
) -> Result<Vec<NarrowBandRow>> {
    let k = config.n_judges;
    let keep_half = (k + 1) / 2;
    let keep_third = (k + 2) / 3;
    sigma_grid
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let replicate_acc: Vec<(f64, f64, f64)> = (0..config.n_replicates)
                .into_par_iter()
                .map(|rep| {
                    let rep_seed = crate::data::mix_seed(config.seed, (si * 100_003 + rep) as u64);
                    let mut rng = stream_rng(rep_seed, 0x6e62_616e);
                    let normal = Normal::new(config.mean_accuracy, sigma).expect("valid sigma");
                    let accs: Vec<f64> = (0..k)
                        .map(|_| normal.sample(&mut rng).clamp(0.02, 0.98))
                        .collect();
                    let weights: Vec<f64> =
                        accs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
                    let mut order: Vec<usize> = (0..k).collect();
                    order.sort_by(|&a, &b| accs[b].partial_cmp(&accs[a]).unwrap().then(a.cmp(&b)));
                    let half: Vec<usize> = order[..keep_half].to_vec();
                    let third: Vec<usize> = order[..keep_third].to_vec();

                    let mut hits_full = 0usize;
                    let mut hits_half = 0usize;
                    let mut hits_third = 0usize;
                    for _ in 0..config.n_items {
                        let truth_pos = rng.gen::<f64>() < config.prior;
                        let votes: Vec<bool> = accs
                            .iter()
                            .map(|&a| (rng.gen::<f64>() < a) == truth_pos)
                            .collect();
                        let score = |subset: &[usize]| -> f64 {
                            subset
                                .iter()
                                .map(|&j| if votes[j] { weights[j] } else { -weights[j] })
                                .sum()
                        };
                        let all: Vec<usize> = (0..k).collect();
                        if (score(&all) >= 0.0) == truth_pos {
                            hits_full += 1;
                        }
                        if (score(&half) >= 0.0) == truth_pos {
                            hits_half += 1;
                        }
                        if (score(&third) >= 0.0) == truth_pos {
                            hits_third += 1;
                        }
                    }
                    let n = config.n_items as f64;
                    (
                        hits_full as f64 / n,
                        hits_half as f64 / n,
                        hits_third as f64 / n,
                    )
                })
                .collect();
            let n = replicate_acc.len() as f64;
            let (sum_full, sum_half, sum_third) = replicate_acc
                .iter()
                .fold((0.0, 0.0, 0.0), |(a, b, c), &(x, y, z)| (a + x, b + y, c + z));
            Ok(NarrowBandRow {
                sigma,
                full_panel_acc: sum_full / n,
                top_half_acc: sum_half / n,
                top_third_acc: sum_third / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_subset_risk_is_prior_entropy() {
        let panel = OraclePanel::new(vec![0.7, 0.8], 0.5).unwrap();
        let risk = oracle_risk(&panel, &[]).unwrap();
        assert_abs_diff_eq!(risk.nll_risk, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(risk.brier_risk, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn single_judge_risk_hand_enumeration() {
        let panel = OraclePanel::new(vec![0.6], 0.5).unwrap();
        let risk = oracle_risk(&panel, &[0]).unwrap();
        let expected_nll = -(0.6_f64.ln() * 0.6 + 0.4_f64.ln() * 0.4);
        assert_abs_diff_eq!(risk.nll_risk, expected_nll, epsilon = 1e-12);
        assert_abs_diff_eq!(risk.brier_risk, 0.24, epsilon = 1e-12);
    }

    #[test]
    fn pure_noise_judge_changes_nothing() {
        let panel = OraclePanel::new(vec![0.7, 0.5], 0.5).unwrap();
        let without = oracle_risk(&panel, &[0]).unwrap();
        let with = oracle_risk(&panel, &[0, 1]).unwrap();
        assert_abs_diff_eq!(without.nll_risk, with.nll_risk, epsilon = 1e-12);
        assert_abs_diff_eq!(without.brier_risk, with.brier_risk, epsilon = 1e-12);
    }

    #[test]
    fn informative_judge_strictly_reduces_risk() {
        let panel = OraclePanel::new(vec![0.7, 0.65], 0.5).unwrap();
        let small = oracle_risk(&panel, &[0]).unwrap();
        let big = oracle_risk(&panel, &[0, 1]).unwrap();
        assert!(big.nll_risk < small.nll_risk - 1e-6);
        assert!(big.brier_risk < small.brier_risk - 1e-6);
    }

    #[test]
    fn enumeration_guard_fires() {
        let panel = OraclePanel::new(vec![0.7; 25], 0.5).unwrap();
        let subset: Vec<usize> = (0..21).collect();
        assert!(matches!(oracle_risk(&panel, &subset), Err(Error::Guard(_))));
    }

    #[test]
    fn cjt_bound_closed_form_values() {
        let (bound, c) = cjt_bound(&OraclePanel::new(vec![0.5], 0.5).unwrap());
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bound, 0.5, epsilon = 1e-15);

        let (_, c3) = cjt_bound(&OraclePanel::new(vec![0.3], 0.5).unwrap());
        let (_, c7) = cjt_bound(&OraclePanel::new(vec![0.7], 0.5).unwrap());
        assert_abs_diff_eq!(c3[0], c7[0], epsilon = 1e-15);

        let (bound10, c10) = cjt_bound(&OraclePanel::new(vec![0.7; 10], 0.5).unwrap());
        assert_abs_diff_eq!(c10[0], 0.08718, epsilon = 1e-5);
        assert_abs_diff_eq!(bound10, 0.2091, epsilon = 1e-4);
    }

    #[test]
    fn single_judge_error_is_exact() {
        let panel = OraclePanel::new(vec![0.8], 0.5).unwrap();
        let err = cjt_empirical_error(&panel, ErrorMode::Enumerate, 0, 0).unwrap();
        assert_abs_diff_eq!(err, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn anti_expert_panel_matches_expert_panel() {
        let expert = OraclePanel::new(vec![0.8; 5], 0.5).unwrap();
        let anti = OraclePanel::new(vec![0.2; 5], 0.5).unwrap();
        let e1 = cjt_empirical_error(&expert, ErrorMode::Enumerate, 0, 0).unwrap();
        let e2 = cjt_empirical_error(&anti, ErrorMode::Enumerate, 0, 0).unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn error_stays_below_bound() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..50 {
            let k = rng.gen_range(1..=8);
            let accs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..0.9)).collect();
            let panel = OraclePanel::new(accs, 0.5).unwrap();
            let err = cjt_empirical_error(&panel, ErrorMode::Enumerate, 0, 0).unwrap();
            let (bound, _) = cjt_bound(&panel);
            assert!(err <= bound + 1e-12, "error {err} above bound {bound}");
        }
    }

    #[test]
    fn monte_carlo_error_tracks_enumeration() {
        let panel = OraclePanel::new(vec![0.7; 7], 0.5).unwrap();
        let exact = cjt_empirical_error(&panel, ErrorMode::Enumerate, 0, 0).unwrap();
        let mc = cjt_empirical_error(&panel, ErrorMode::MonteCarlo, 200_000, 3).unwrap();
        assert!((exact - mc).abs() < 0.006, "exact {exact} vs mc {mc}");
    }

    #[test]
    fn hoeffding_exponents_hand_values() {
        let homo = OraclePanel::new(vec![0.65; 6], 0.5).unwrap();
        let (e_w, e_mv) = hoeffding_exponents(&homo);
        assert_abs_diff_eq!(e_w, e_mv, epsilon = 1e-12);

        let hetero = OraclePanel::new(vec![0.6, 0.9], 0.5).unwrap();
        let (e_w, e_mv) = hoeffding_exponents(&hetero);
        assert_abs_diff_eq!(e_w, 0.3387, epsilon = 1e-4);
        assert_abs_diff_eq!(e_mv, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn hoeffding_expansion_matches_small_delta() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..100 {
            let k = rng.gen_range(4..25);
            let deltas: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let accs: Vec<f64> = deltas.iter().map(|d| 0.5 + d).collect();
            let panel = OraclePanel::new(accs, 0.5).unwrap();
            let (e_w, e_mv) = hoeffding_exponents(&panel);
            let mean = deltas.iter().sum::<f64>() / k as f64;
            let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / k as f64;
            let predicted = 2.0 * k as f64 * var;
            let rel = ((e_w - e_mv) - predicted).abs() / (e_w - e_mv + 1e-12);
            assert!(rel <= 0.05, "relative error {rel}");
        }
    }

    #[test]
    fn synth_panel_is_deterministic_and_accurate() {
        let (votes, labels, panel) =
            synth_panel(5, &AccuracySpec::Constant(0.5), 4000, 0.5, 99).unwrap();
        let (votes2, labels2, _) =
            synth_panel(5, &AccuracySpec::Constant(0.5), 4000, 0.5, 99).unwrap();
        assert_eq!(votes, votes2);
        assert_eq!(labels, labels2);
        assert_eq!(panel.accuracies(), &[0.5; 5]);
        // Empirical accuracy of a coin-flip judge stays near 1/2.
        for k in 0..5 {
            let mut correct = 0;
            for t in 0..4000 {
                let pos = votes.verdict(t, k) == Verdict::Positive;
                if pos == (labels.get(t) == 1) {
                    correct += 1;
                }
            }
            let acc = correct as f64 / 4000.0;
            assert!((acc - 0.5).abs() < 3.0 / (4000.0_f64).sqrt());
        }
    }

    #[test]
    fn synth_panel_clamps_perfect_accuracy() {
        let (votes, labels, panel) =
            synth_panel(2, &AccuracySpec::Constant(1.0), 500, 0.5, 1).unwrap();
        assert_eq!(panel.accuracies(), &[0.999, 0.999]);
        let mut agree = 0;
        for t in 0..500 {
            if (votes.verdict(t, 0) == Verdict::Positive) == (labels.get(t) == 1) {
                agree += 1;
            }
        }
        assert!(agree >= 495);
    }

    #[test]
    fn synth_panel_honors_explicit_list() {
        let spec = AccuracySpec::Explicit(vec![0.3, 0.9]);
        let (_, _, panel) = synth_panel(2, &spec, 10, 0.5, 0).unwrap();
        assert_eq!(panel.accuracies(), &[0.3, 0.9]);
        assert!(synth_panel(3, &spec, 10, 0.5, 0).is_err());
    }

    #[test]
    fn square_distortion_is_rank_invariant() {
        let panel = OraclePanel::new(vec![0.75; 6], 0.5).unwrap();
        let (clean, distorted) =
            monotone_distortion_check(&panel, Distortion::Square, 2000, 21).unwrap();
        assert!((clean - distorted).abs() < 1e-10, "{clean} vs {distorted}");
    }

    #[test]
    fn invert_distortion_recovers_after_calibration() {
        let panel = OraclePanel::new(vec![0.75; 6], 0.5).unwrap();
        let (clean, distorted) =
            monotone_distortion_check(&panel, Distortion::Invert, 2000, 22).unwrap();
        assert!((clean - distorted).abs() < 1e-10, "{clean} vs {distorted}");
    }

    #[test]
    fn shuffle_distortion_hurts() {
        let panel = OraclePanel::new(vec![0.8; 8], 0.5).unwrap();
        let (clean, distorted) =
            monotone_distortion_check(&panel, Distortion::Shuffle, 2000, 23).unwrap();
        assert!(distorted > clean + 0.05, "clean {clean}, shuffled {distorted}");
    }

    #[test]
    fn narrow_band_gap_shrinks_with_heterogeneity() {
        let config = NarrowBandConfig {
            n_replicates: 20,
            n_items: 500,
            ..NarrowBandConfig::default()
        };
        let rows = narrow_band_experiment(&[0.01, 0.30], &config).unwrap();
        let gap = |r: &NarrowBandRow| r.full_panel_acc - r.top_half_acc.max(r.top_third_acc);
        assert!(gap(&rows[0]) > gap(&rows[1]));
        let rows2 = narrow_band_experiment(&[0.01, 0.30], &config).unwrap();
        assert_eq!(rows[0].full_panel_acc, rows2[0].full_panel_acc);
    }
}
