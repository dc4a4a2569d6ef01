//! Core data model: vote matrices, labels, split plans, clipped probability
//! vectors, and the deterministic seed-derivation contract shared by every
//! other module.
//!
//! All types are immutable after construction and all operations are pure,
//! so everything here is safe to share across worker threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A single judge verdict. Missing is a first-class state, never conflated
/// with a negative vote; the CSV sentinel `-1` exists only at the file
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Positive,
    Negative,
    Missing,
}

impl Verdict {
    /// Decode the file-boundary sentinel: 1, 0, or -1.
    pub fn from_sentinel(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Verdict::Positive),
            0 => Ok(Verdict::Negative),
            -1 => Ok(Verdict::Missing),
            other => Err(Error::data(format!("verdict cell must be 0, 1 or -1, got {other}"))),
        }
    }

    pub fn to_sentinel(self) -> i8 {
        match self {
            Verdict::Positive => 1,
            Verdict::Negative => 0,
            Verdict::Missing => -1,
        }
    }

    pub fn is_missing(self) -> bool {
        matches!(self, Verdict::Missing)
    }

    /// Signed vote: +1 positive, -1 negative, 0 missing.
    pub fn signed(self) -> f64 {
        match self {
            Verdict::Positive => 1.0,
            Verdict::Negative => -1.0,
            Verdict::Missing => 0.0,
        }
    }
}

/// N×K verdict grid, item-major. The raw evidence every pipeline consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteMatrix {
    n_items: usize,
    n_judges: usize,
    verdicts: Vec<Verdict>,
    judge_ids: Vec<String>,
    family_ids: Option<Vec<String>>,
}

impl VoteMatrix {
    pub fn new(
        n_items: usize,
        n_judges: usize,
        verdicts: Vec<Verdict>,
        judge_ids: Vec<String>,
        family_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        if verdicts.len() != n_items * n_judges {
            return Err(Error::invalid(format!(
                "verdict grid has {} cells, expected {} x {} = {}",
                verdicts.len(),
                n_items,
                n_judges,
                n_items * n_judges
            )));
        }
        if judge_ids.len() != n_judges {
            return Err(Error::invalid(format!(
                "{} judge ids for {} judges",
                judge_ids.len(),
                n_judges
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &judge_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate judge id `{id}`")));
            }
        }
        if let Some(fams) = &family_ids {
            if fams.len() != n_judges {
                return Err(Error::invalid(format!(
                    "{} family labels for {} judges",
                    fams.len(),
                    n_judges
                )));
            }
        }
        Ok(VoteMatrix {
            n_items,
            n_judges,
            verdicts,
            judge_ids,
            family_ids,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_judges(&self) -> usize {
        self.n_judges
    }

    pub fn verdict(&self, item: usize, judge: usize) -> Verdict {
        self.verdicts[item * self.n_judges + judge]
    }

    /// All verdicts for one item, in judge order.
    pub fn row(&self, item: usize) -> &[Verdict] {
        &self.verdicts[item * self.n_judges..(item + 1) * self.n_judges]
    }

    pub fn judge_ids(&self) -> &[String] {
        &self.judge_ids
    }

    pub fn family_ids(&self) -> Option<&[String]> {
        self.family_ids.as_deref()
    }

    /// Judge-agreement level for one item: max(positive fraction, negative
    /// fraction) over non-missing verdicts, 0.5 when every judge is missing.
    pub fn agreement(&self, item: usize) -> f64 {
        let mut pos = 0usize;
        let mut tot = 0usize;
        for v in self.row(item) {
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
            return 0.5;
        }
        let frac = pos as f64 / tot as f64;
        frac.max(1.0 - frac)
    }
}

/// Ground-truth labels paired with a [`VoteMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<u8>,
}

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&z| z > 1) {
            return Err(Error::invalid(format!("labels must be 0 or 1, got {bad}")));
        }
        Ok(LabelVector { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, item: usize) -> u8 {
        self.labels[item]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }
}

/// One calibration/evaluation split, with optional nested sub-splits of the
/// calibration half (aggregator-fit vs calibrator-fit slices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub calib_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
    pub inner_agg_idx: Option<Vec<usize>>,
    pub inner_cal_idx: Option<Vec<usize>>,
    pub seed: u64,
    pub repeat_id: u32,
}

impl SplitPlan {
    /// Slice used to fit aggregator parameters: the inner aggregator
    /// sub-split when the nested protocol is active, else the whole
    /// calibration half.
    pub fn agg_fit_idx(&self) -> &[usize] {
        self.inner_agg_idx.as_deref().unwrap_or(&self.calib_idx)
    }

    /// Slice used to fit calibrator parameters (residual + distribution map).
    pub fn cal_fit_idx(&self) -> &[usize] {
        self.inner_cal_idx.as_deref().unwrap_or(&self.calib_idx)
    }
}

/// Pipeline stage a probability vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Corrected,
    Calibrated,
}

/// Per-item probabilities at a named pipeline stage, always clipped into
/// `[eta, 1 - eta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    values: Vec<f64>,
    stage: Stage,
    clip_floor: f64,
}

impl ProbVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn clip_floor(&self) -> f64 {
        self.clip_floor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, item: usize) -> f64 {
        self.values[item]
    }
}

/// Clip probabilities into `[eta, 1 - eta]` and tag them with a stage.
///
/// Order-preserving: each output is `median(eta, input, 1 - eta)`.
pub fn clip(values: &[f64], stage: Stage, eta: f64) -> Result<ProbVector> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::invalid(format!("clip floor must be in (0, 0.5), got {eta}")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite probability {bad}")));
    }
    let values = values.iter().map(|&v| v.clamp(eta, 1.0 - eta)).collect();
    Ok(ProbVector {
        values,
        stage,
        clip_floor: eta,
    })
}

/// Derive a stream seed from a master seed and a stream index.
///
/// This is the single integer-mixing function behind every piece of
/// randomness in the crate, so results are pure functions of
/// `(inputs, master_seed)` regardless of execution order. It runs the
/// SplitMix64 finalizer over the master seed combined with the
/// golden-ratio-multiplied stream index.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut x = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic RNG for a derived stream.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, stream))
}

/// Generate `n_repeats` independent random calibration/evaluation splits.
///
/// Each plan is a uniform random permutation of `0..n_items` cut at
/// `floor(n_items * calib_frac)`; plan `r` is a pure function of
/// `(master_seed, r)`. When `nested_frac` is given, the calibration half is
/// further cut at `floor(|calib| * nested_frac)` into an aggregator-fit
/// prefix and a calibrator-fit suffix.
pub fn make_splits(
    n_items: usize,
    n_repeats: usize,
    calib_frac: f64,
    nested_frac: Option<f64>,
    master_seed: u64,
) -> Result<Vec<SplitPlan>> {
    if !(calib_frac > 0.0 && calib_frac < 1.0) {
        return Err(Error::invalid(format!(
            "calib_frac must be in (0, 1), got {calib_frac}"
        )));
    }
    if n_items < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 items to split, got {n_items}"
        )));
    }
    let cut = (n_items as f64 * calib_frac).floor() as usize;
    if cut == 0 || cut == n_items {
        return Err(Error::invalid(format!(
            "calib_frac {calib_frac} leaves an empty part for {n_items} items"
        )));
    }
    if let Some(nf) = nested_frac {
        if !(nf > 0.0 && nf < 1.0) {
            return Err(Error::invalid(format!(
                "nested_frac must be in (0, 1), got {nf}"
            )));
        }
        let inner_cut = (cut as f64 * nf).floor() as usize;
        if inner_cut == 0 || inner_cut == cut {
            return Err(Error::invalid(format!(
                "nested_frac {nf} leaves an empty inner part for {cut} calibration items"
            )));
        }
    }

    let mut plans = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let seed = mix_seed(master_seed, r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n_items).collect();
        perm.shuffle(&mut rng);
        let calib_idx = perm[..cut].to_vec();
        let eval_idx = perm[cut..].to_vec();
        let (inner_agg_idx, inner_cal_idx) = match nested_frac {
            Some(nf) => {
                let inner_cut = (cut as f64 * nf).floor() as usize;
                (
                    Some(calib_idx[..inner_cut].to_vec()),
                    Some(calib_idx[inner_cut..].to_vec()),
                )
            }
            None => (None, None),
        };
        plans.push(SplitPlan {
            calib_idx,
            eval_idx,
            inner_agg_idx,
            inner_cal_idx,
            seed,
            repeat_id: r as u32,
        });
    }
    Ok(plans)
}
