//! Panel curation: accuracy ranking, top-k pruning, family deduplication,
//! subset searches (greedy forward, beam, backward elimination, exhaustive),
//! an L1-sparse logistic curator on the raw vote matrix, leaky/random
//! diagnostic baselines, and the P1-P3 scope diagnostics.
//!
//! Subset searches are generic over an evaluator closure that refits the
//! aggregator+calibrator pipeline on a fixed inner split and returns the
//! inner calibrated NLL of a candidate subset. Candidate evaluations within
//! one search step run in parallel; failed candidates are skipped and noted,
//! never fatal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::JudgeStats;
use crate::data::{stream_rng, LabelVector, Verdict, VoteMatrix};
use crate::opt::{fit_logistic_prox, nll_of_eta};
use crate::{Error, Result};

/// Which curator produced a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationStrategy {
    AllJudges,
    TopK,
    FamilyDedup,
    GreedyForward,
    BeamSearch,
    BackwardGreedy,
    Exhaustive,
    L1Sparse,
    OracleTopK,
    RandomK,
}

/// A curated judge subset with its search provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationResult {
    pub strategy: CurationStrategy,
    /// Selected judge indices, ascending.
    pub selected: Vec<usize>,
    /// Inner-split calibrated NLL of the selected subset, when the strategy
    /// evaluates one.
    pub inner_nll: Option<f64>,
    /// (subset size, inner NLL) after each accepted search step.
    pub search_trace: Option<Vec<(usize, f64)>>,
    /// True for diagnostic-only strategies that peek at evaluation data.
    pub leaky: bool,
    /// Skipped candidates, fallbacks, and other non-fatal events.
    pub notes: Vec<String>,
}

impl CurationResult {
    fn new(strategy: CurationStrategy, mut selected: Vec<usize>) -> Self {
        selected.sort_unstable();
        CurationResult {
            strategy,
            selected,
            inner_nll: None,
            search_trace: None,
            leaky: false,
            notes: Vec::new(),
        }
    }
}

/// Judges ordered by descending posterior mean accuracy, ties broken by
/// ascending judge index.
pub fn rank_judges(stats: &JudgeStats) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats
            .get(b)
            .posterior_mean()
            .total_cmp(&stats.get(a).posterior_mean())
            .then(a.cmp(&b))
    });
    order
}

/// Keep the k judges with the highest posterior mean accuracy.
pub fn top_k(stats: &JudgeStats, k: usize) -> Result<CurationResult> {
    if k == 0 || k > stats.len() {
        return Err(Error::invalid(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            stats.len()
        )));
    }
    let ranked = rank_judges(stats);
    Ok(CurationResult::new(CurationStrategy::TopK, ranked[..k].to_vec()))
}

/// One representative per family: the member with the highest posterior mean
/// accuracy, ties broken by index.
pub fn family_dedup(stats: &JudgeStats, family_ids: &[String]) -> Result<CurationResult> {
    if family_ids.len() != stats.len() {
        return Err(Error::invalid(format!(
            "{} family labels for {} judges",
            family_ids.len(),
            stats.len()
        )));
    }
    let mut best: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for j in 0..stats.len() {
        let entry = best.entry(family_ids[j].as_str()).or_insert(j);
        if stats.get(j).posterior_mean() > stats.get(*entry).posterior_mean() {
            *entry = j;
        }
    }
    Ok(CurationResult::new(
        CurationStrategy::FamilyDedup,
        best.into_values().collect(),
    ))
}

/// Evaluate candidates in stable order, in parallel; failures become notes.
fn evaluate_candidates<E>(
    eval: &E,
    candidates: &[Vec<usize>],
    notes: &mut Vec<String>,
) -> Vec<(usize, f64)>
where
    E: Fn(&[usize]) -> Result<f64> + Sync,
{
    let results: Vec<Result<f64>> = candidates.par_iter().map(|c| eval(c)).collect();
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(nll) if nll.is_finite() => scored.push((i, nll)),
            Ok(nll) => notes.push(format!(
                "candidate {:?} skipped: non-finite inner NLL {nll}",
                candidates[i]
            )),
            Err(e) => notes.push(format!("candidate {:?} skipped: {e}", candidates[i])),
        }
    }
    scored
}

/// Greedy forward selection: add the judge that most reduces inner NLL,
/// stop at `k_max` or when no addition improves.
pub fn greedy_forward<E>(eval: &E, panel: &[usize], k_max: usize) -> Result<CurationResult>
where
    E: Fn(&[usize]) -> Result<f64> + Sync,
{
    if panel.is_empty() || k_max == 0 {
        return Err(Error::invalid("greedy forward needs a panel and k_max >= 1".to_string()));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut current = f64::INFINITY;
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    while selected.len() < k_max {
        let remaining: Vec<usize> =
            panel.iter().copied().filter(|j| !selected.contains(j)).collect();
        if remaining.is_empty() {
            break;
        }
        let candidates: Vec<Vec<usize>> = remaining
            .iter()
            .map(|&j| {
                let mut c = selected.clone();
                c.push(j);
                c.sort_unstable();
                c
            })
            .collect();
        let scored = evaluate_candidates(eval, &candidates, &mut notes);
        let Some(&(best_i, best_nll)) = scored
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        else {
            break;
        };
        if best_nll >= current {
            break;
        }
        selected = candidates[best_i].clone();
        current = best_nll;
        trace.push((selected.len(), current));
    }
    if selected.is_empty() {
        return Err(Error::invalid(
            "greedy forward could not evaluate any candidate".to_string(),
        ));
    }
    let mut result = CurationResult::new(CurationStrategy::GreedyForward, selected);
    result.inner_nll = Some(current);
    result.search_trace = Some(trace);
    result.notes = notes;
    Ok(result)
}

/// Forward beam search: keep the `width` best subsets per step, return the
/// best subset seen overall. Width 1 reduces to greedy forward.
pub fn beam_search<E>(
    eval: &E,
    panel: &[usize],
    width: usize,
    max_steps: usize,
) -> Result<CurationResult>
where
    E: Fn(&[usize]) -> Result<f64> + Sync,
{
    if panel.is_empty() || width == 0 || max_steps == 0 {
        return Err(Error::invalid(
            "beam search needs a panel, width >= 1 and max_steps >= 1".to_string(),
        ));
    }
    let mut notes = Vec::new();
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), f64::INFINITY)];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut trace = Vec::new();
    for _ in 0..max_steps {
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (subset, _) in &beam {
            for &j in panel {
                if subset.contains(&j) {
                    continue;
                }
                let mut c = subset.clone();
                c.push(j);
                c.sort_unstable();
                if seen.insert(c.clone()) {
                    candidates.push(c);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let scored = evaluate_candidates(eval, &candidates, &mut notes);
        if scored.is_empty() {
            break;
        }
        let mut ranked: Vec<(Vec<usize>, f64)> = scored
            .into_iter()
            .map(|(i, nll)| (candidates[i].clone(), nll))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        ranked.truncate(width);
        let step_best = ranked[0].clone();
        let improved = best.as_ref().map_or(true, |(_, nll)| step_best.1 < *nll);
        if !improved {
            break;
        }
        trace.push((step_best.0.len(), step_best.1));
        best = Some(step_best);
        beam = ranked;
    }
    let (selected, nll) = best.ok_or_else(|| {
        Error::invalid("beam search could not evaluate any candidate".to_string())
    })?;
    let mut result = CurationResult::new(CurationStrategy::BeamSearch, selected);
    result.inner_nll = Some(nll);
    result.search_trace = Some(trace);
    result.notes = notes;
    Ok(result)
}

/// Backward greedy elimination from the full panel: repeatedly remove the
/// judge whose removal most improves inner NLL, stop when nothing improves.
pub fn backward_greedy<E>(eval: &E, panel: &[usize]) -> Result<CurationResult>
where
    E: Fn(&[usize]) -> Result<f64> + Sync,
{
    if panel.is_empty() {
        return Err(Error::invalid("backward greedy needs a panel".to_string()));
    }
    let mut notes = Vec::new();
    let mut selected: Vec<usize> = {
        let mut p = panel.to_vec();
        p.sort_unstable();
        p
    };
    let mut current = eval(&selected)?;
    let mut trace = vec![(selected.len(), current)];
    while selected.len() > 1 {
        let candidates: Vec<Vec<usize>> = (0..selected.len())
            .map(|drop| {
                selected
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != drop)
                    .map(|(_, &j)| j)
                    .collect()
            })
            .collect();
        let scored = evaluate_candidates(eval, &candidates, &mut notes);
        let Some(&(best_i, best_nll)) = scored
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        else {
            break;
        };
        if best_nll >= current {
            break;
        }
        selected = candidates[best_i].clone();
        current = best_nll;
        trace.push((selected.len(), current));
    }
    let mut result = CurationResult::new(CurationStrategy::BackwardGreedy, selected);
    result.inner_nll = Some(current);
    result.search_trace = Some(trace);
    result.notes = notes;
    Ok(result)
}

/// Maximum panel size for exhaustive subset enumeration.
pub const EXHAUSTIVE_GUARD: usize = 20;

/// Enumerate every nonempty subset and return the inner-NLL minimizer.
pub fn exhaustive_search<E>(eval: &E, panel: &[usize]) -> Result<CurationResult>
where
    E: Fn(&[usize]) -> Result<f64> + Sync,
{
    if panel.is_empty() {
        return Err(Error::invalid("exhaustive search needs a panel".to_string()));
    }
    if panel.len() > EXHAUSTIVE_GUARD {
        return Err(Error::Guard(format!(
            "exhaustive search over {} judges exceeds the guard of {EXHAUSTIVE_GUARD}",
            panel.len()
        )));
    }
    let k = panel.len();
    let scored: Vec<(u64, Result<f64>)> = (1u64..(1u64 << k))
        .into_par_iter()
        .map(|mask| {
            let subset: Vec<usize> = (0..k)
                .filter(|j| mask >> j & 1 == 1)
                .map(|j| panel[j])
                .collect();
            (mask, eval(&subset))
        })
        .collect();
    let mut notes = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    for (mask, r) in scored {
        match r {
            Ok(nll) if nll.is_finite() => {
                if best.map_or(true, |(_, b)| nll < b) {
                    best = Some((mask, nll));
                }
            }
            Ok(nll) => notes.push(format!("subset mask {mask:#b} skipped: non-finite NLL {nll}")),
            Err(e) => notes.push(format!("subset mask {mask:#b} skipped: {e}")),
        }
    }
    let (mask, nll) = best.ok_or_else(|| {
        Error::invalid("exhaustive search could not evaluate any subset".to_string())
    })?;
    let selected: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| panel[j]).collect();
    let mut result = CurationResult::new(CurationStrategy::Exhaustive, selected);
    result.inner_nll = Some(nll);
    result.notes = notes;
    Ok(result)
}

/// L1-sparse logistic curator on the raw vote matrix.
///
/// Votes encode as signed features (+1/-1/0-for-missing); the intercept is
/// unpenalized. The fit slice is split 70/30 into fit and validation parts,
/// the penalty grid is scored by validation NLL, and the selected judges are
/// those with nonzero weight at the best grid point. An all-zero solution
/// falls back to the full panel.
pub fn l1_curator(
    votes: &VoteMatrix,
    labels: &LabelVector,
    fit_idx: &[usize],
    penalty_grid: &[f64],
) -> Result<CurationResult> {
    if fit_idx.len() < 4 {
        return Err(Error::invalid("l1 curator needs at least 4 fit items".to_string()));
    }
    if penalty_grid.is_empty() || penalty_grid.iter().any(|&c| c <= 0.0) {
        return Err(Error::invalid("penalty grid must be positive".to_string()));
    }
    let k = votes.n_judges();
    let d = k + 1;
    let cut = (fit_idx.len() as f64 * 0.7).floor() as usize;
    let (inner_fit, inner_val) = fit_idx.split_at(cut.clamp(1, fit_idx.len() - 1));

    let design_of = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut design = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len());
        for &t in idx {
            for j in 0..k {
                design.push(votes.verdict(t, j).signed());
            }
            design.push(1.0);
            y.push(f64::from(labels.get(t)));
        }
        (design, y)
    };
    let (fit_design, fit_y) = design_of(inner_fit);
    let (val_design, val_y) = design_of(inner_val);

    let mut notes = Vec::new();
    let mut best: Option<(f64, Vec<f64>, f64)> = None; // (val nll, coef, c)
    for &c in penalty_grid {
        let mut l1 = vec![1.0 / (c * inner_fit.len() as f64); d];
        l1[d - 1] = 0.0;
        let fit = fit_logistic_prox(
            &fit_design,
            d,
            &fit_y,
            None,
            &l1,
            &vec![0.0; d],
            &vec![0.0; d],
            100_000,
            1e-10,
        );
        let mut val_nll = 0.0;
        for (i, &yi) in val_y.iter().enumerate() {
            let mut eta = 0.0;
            for j in 0..d {
                eta += val_design[i * d + j] * fit.coef[j];
            }
            val_nll += nll_of_eta(eta, yi);
        }
        val_nll /= val_y.len() as f64;
        if best.as_ref().map_or(true, |(b, _, _)| val_nll < *b) {
            best = Some((val_nll, fit.coef, c));
        }
    }
    let (val_nll, coef, c) = best.expect("nonempty grid");
    let selected: Vec<usize> = (0..k).filter(|&j| coef[j] != 0.0).collect();
    let mut result = if selected.is_empty() {
        notes.push(format!("all weights zero at best C {c}; falling back to the full panel"));
        CurationResult::new(CurationStrategy::L1Sparse, (0..k).collect())
    } else {
        CurationResult::new(CurationStrategy::L1Sparse, selected)
    };
    result.inner_nll = Some(val_nll);
    result.notes = notes;
    Ok(result)
}

/// Diagnostic-only ranking by evaluation-split accuracy. Leaks the
/// evaluation labels by construction and is flagged as such.
pub fn oracle_top_k(
    votes: &VoteMatrix,
    labels: &LabelVector,
    eval_idx: &[usize],
    k: usize,
) -> Result<CurationResult> {
    let stats = crate::aggregate::fit_judge_stats(votes, labels, eval_idx)?;
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats
            .get(b)
            .plugin_accuracy()
            .total_cmp(&stats.get(a).plugin_accuracy())
            .then(a.cmp(&b))
    });
    if k == 0 || k > order.len() {
        return Err(Error::invalid(format!(
            "oracle top-k needs 1 <= k <= {}, got {k}",
            order.len()
        )));
    }
    let mut result = CurationResult::new(CurationStrategy::OracleTopK, order[..k].to_vec());
    result.leaky = true;
    Ok(result)
}

/// Uniform random subset of size k, deterministic per seed.
pub fn random_k(panel: &[usize], k: usize, seed: u64) -> Result<CurationResult> {
    if k == 0 || k > panel.len() {
        return Err(Error::invalid(format!(
            "random-k needs 1 <= k <= {}, got {k}",
            panel.len()
        )));
    }
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(seed, 0x7261_6e64);
    let mut pool = panel.to_vec();
    pool.shuffle(&mut rng);
    Ok(CurationResult::new(CurationStrategy::RandomK, pool[..k].to_vec()))
}

/// Default forward-search depth by panel size.
pub fn default_k_max(panel_size: usize) -> usize {
    if panel_size < 50 {
        8
    } else if panel_size < 120 {
        10
    } else {
        15
    }
}

/// Per-judge scope diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeDiagnostic {
    pub judge: usize,
    /// Parse rate (or verdict coverage when no parser ran).
    pub parse_rate: f64,
    /// P1: parse rate below 0.90.
    pub p1_flag: bool,
    pub plugin_accuracy: f64,
    pub se: f64,
    /// Reliably below chance: accuracy < 1/2 - 2 se.
    pub below_chance: bool,
}

/// Panel saturation probe: calibrated NLL with and without candidate judges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationProbe {
    pub nll_with: f64,
    pub nll_without: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationFlag {
    pub floor: f64,
    pub delta_nll: f64,
    /// Adding the candidates moves NLL by no more than 1% of the floor.
    pub saturated: bool,
}

/// Scope diagnostics report (P1 parseability, below-chance filter, P2/P3
/// saturation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub judges: Vec<JudgeDiagnostic>,
    pub saturation: Option<SaturationFlag>,
}

pub const PARSE_RATE_FLOOR: f64 = 0.90;
pub const SHARPNESS_FLOOR: f64 = 0.005;

/// Build the diagnostics report. When `parse_rates` is absent, per-judge
/// verdict coverage over the matrix stands in for parse rate.
pub fn judge_diagnostics(
    votes: &VoteMatrix,
    stats: &JudgeStats,
    parse_rates: Option<&[f64]>,
    saturation: Option<SaturationProbe>,
) -> Result<DiagnosticsReport> {
    if stats.len() != votes.n_judges() {
        return Err(Error::invalid(format!(
            "{} judge stats for {} judges",
            stats.len(),
            votes.n_judges()
        )));
    }
    if let Some(rates) = parse_rates {
        if rates.len() != votes.n_judges() {
            return Err(Error::invalid(format!(
                "{} parse rates for {} judges",
                rates.len(),
                votes.n_judges()
            )));
        }
    }
    let n_items = votes.n_items();
    let judges = (0..votes.n_judges())
        .map(|j| {
            let parse_rate = match parse_rates {
                Some(rates) => rates[j],
                None => {
                    let present = (0..n_items)
                        .filter(|&t| !votes.verdict(t, j).is_missing())
                        .count();
                    if n_items == 0 {
                        0.0
                    } else {
                        present as f64 / n_items as f64
                    }
                }
            };
            let stat = stats.get(j);
            let acc = stat.plugin_accuracy();
            let se = if stat.n > 0 {
                (acc * (1.0 - acc) / f64::from(stat.n)).sqrt()
            } else {
                0.0
            };
            JudgeDiagnostic {
                judge: j,
                parse_rate,
                p1_flag: parse_rate < PARSE_RATE_FLOOR,
                plugin_accuracy: acc,
                se,
                below_chance: stat.n > 0 && acc < 0.5 - 2.0 * se,
            }
        })
        .collect();
    let saturation = saturation.map(|probe| {
        let delta = probe.nll_with - probe.nll_without;
        SaturationFlag {
            floor: SHARPNESS_FLOOR,
            delta_nll: delta,
            saturated: delta.abs() <= 0.01 * SHARPNESS_FLOOR,
        }
    });
    Ok(DiagnosticsReport { judges, saturation })
}

/// A simple inner-split evaluator for searches: Bayesian one-coin fit on the
/// inner-fit slice, mean NLL on the inner-validation slice. The experiment
/// harness supplies a full pipeline evaluator instead; this one is for
/// callers that want curation without calibration.
pub fn one_coin_inner_evaluator<'a>(
    votes: &'a VoteMatrix,
    labels: &'a LabelVector,
    inner_fit: &'a [usize],
    inner_val: &'a [usize],
    eta: f64,
) -> impl Fn(&[usize]) -> Result<f64> + Sync + 'a {
    move |subset: &[usize]| {
        let stats = crate::aggregate::fit_judge_stats(votes, labels, inner_fit)?.subset(subset);
        let mut total = 0.0;
        for &t in inner_val {
            let row: Vec<Verdict> = subset.iter().map(|&j| votes.verdict(t, j)).collect();
            let p = crate::aggregate::bayes_one_coin(&row, &stats).clamp(eta, 1.0 - eta);
            total += if labels.get(t) == 1 { -p.ln() } else { -(1.0 - p).ln() };
        }
        Ok(total / inner_val.len() as f64)
    }
}
