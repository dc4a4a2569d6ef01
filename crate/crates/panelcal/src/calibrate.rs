//! Steps 2-3: residual logit correction and distribution-level calibration.
//!
//! The residual step fits `logit(p_corr) = a * logit(p) + b` (optionally with
//! item features) by maximum likelihood. The distribution step offers Platt,
//! temperature, isotonic, and the default: beta calibration
//! `g(p) = sigmoid(a log p + b log(1-p) + c)` regularized toward the identity
//! `(a, b, c) = (1, -1, 0)` with an elastic-net penalty
//! `lambda * [mix * L1 + (1 - mix) * L2]` on the shifted coordinates.
//!
//! Degenerate fit slices (single class, constant scores) never fail; they
//! return flagged identity-like parameters so budget sweeps at tiny
//! calibration sizes keep running.

use serde::{Deserialize, Serialize};

use crate::data::{clip, LabelVector, ProbVector, Stage};
use crate::opt::{
    fit_logistic_newton, fit_logistic_prox, golden_section_min, logit, nll_of_eta, sigmoid,
};
use crate::{Error, Result};

/// Affine logit correction `logit(p') = a * logit(p) + x'gamma + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualParams {
    pub slope: f64,
    pub intercept: f64,
    pub feature_coeffs: Vec<f64>,
    /// Set when the fit slice was degenerate and an intercept-only or
    /// identity fallback was returned instead of an MLE.
    pub fallback: bool,
}

impl ResidualParams {
    pub fn identity() -> Self {
        ResidualParams {
            slope: 1.0,
            intercept: 0.0,
            feature_coeffs: Vec::new(),
            fallback: false,
        }
    }
}

/// Beta-calibration map parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lambda: f64,
    pub mix: f64,
    pub fallback: bool,
}

impl BetaParams {
    pub fn identity(lambda: f64, mix: f64) -> Self {
        BetaParams {
            a: 1.0,
            b: -1.0,
            c: 0.0,
            lambda,
            mix,
            fallback: false,
        }
    }
}

/// Fitted temperature-scaling parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub t: f64,
    pub fallback: bool,
}

/// Monotone step function fitted by pool-adjacent-violators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    /// Increasing score breakpoints (left edge of each pooled block).
    pub breakpoints: Vec<f64>,
    /// Non-decreasing clipped probability per block.
    pub levels: Vec<f64>,
}

fn class_rate(labels: &LabelVector, fit_idx: &[usize]) -> f64 {
    let pos = fit_idx.iter().filter(|&&t| labels.get(t) == 1).count();
    pos as f64 / fit_idx.len() as f64
}

fn check_fit_inputs(p: &ProbVector, labels: &LabelVector, fit_idx: &[usize]) -> Result<()> {
    if fit_idx.is_empty() {
        return Err(Error::invalid("empty fit slice".to_string()));
    }
    if p.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            p.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = fit_idx.iter().find(|&&t| t >= p.len()) {
        return Err(Error::invalid(format!("fit index {bad} out of range")));
    }
    Ok(())
}

/// Maximum-likelihood logistic fit of labels on `logit(p)` plus optional item
/// features. Single-class slices fall back to an intercept-only fit and
/// constant-score slices drop the slope; both are flagged, not errors.
pub fn fit_residual(
    p_raw: &ProbVector,
    labels: &LabelVector,
    fit_idx: &[usize],
    features: Option<&[Vec<f64>]>,
) -> Result<ResidualParams> {
    check_fit_inputs(p_raw, labels, fit_idx)?;
    let n_feat = features.map_or(0, |f| {
        f.first().map_or(0, |row| row.len())
    });
    if let Some(f) = features {
        if f.len() != p_raw.len() {
            return Err(Error::invalid(format!(
                "{} feature rows for {} items",
                f.len(),
                p_raw.len()
            )));
        }
    }
    let eta = p_raw.clip_floor();
    let rate = class_rate(labels, fit_idx);
    if rate == 0.0 || rate == 1.0 {
        return Ok(ResidualParams {
            slope: 0.0,
            intercept: logit(rate.clamp(eta, 1.0 - eta)),
            feature_coeffs: vec![0.0; n_feat],
            fallback: true,
        });
    }
    let logits: Vec<f64> = fit_idx.iter().map(|&t| logit(p_raw.get(t))).collect();
    let spread = logits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if spread.1 - spread.0 < 1e-12 {
        // No slope information; the MLE intercept is the logit class rate.
        return Ok(ResidualParams {
            slope: 0.0,
            intercept: logit(rate.clamp(eta, 1.0 - eta)),
            feature_coeffs: vec![0.0; n_feat],
            fallback: true,
        });
    }

    let d = 2 + n_feat;
    let mut design = Vec::with_capacity(fit_idx.len() * d);
    let mut y = Vec::with_capacity(fit_idx.len());
    for (row, &t) in fit_idx.iter().enumerate() {
        design.push(logits[row]);
        if let Some(f) = features {
            design.extend_from_slice(&f[t]);
        }
        design.push(1.0);
        y.push(f64::from(labels.get(t)));
    }
    let mut start = vec![0.0; d];
    start[0] = 1.0; // identity warm start: slope 1, everything else 0
    let fit = fit_logistic_newton(&design, d, &y, None, &vec![0.0; d], &start, 200, 1e-12);
    if fit.coef.iter().any(|c| !c.is_finite()) {
        return Ok(ResidualParams {
            slope: 1.0,
            intercept: 0.0,
            feature_coeffs: vec![0.0; n_feat],
            fallback: true,
        });
    }
    Ok(ResidualParams {
        slope: fit.coef[0],
        intercept: fit.coef[d - 1],
        feature_coeffs: fit.coef[1..d - 1].to_vec(),
        fallback: false,
    })
}

/// Apply the residual correction and clip. Features are required exactly
/// when the params carry feature coefficients.
pub fn apply_residual(
    params: &ResidualParams,
    p: &ProbVector,
    features: Option<&[Vec<f64>]>,
) -> Result<ProbVector> {
    let eta = p.clip_floor();
    let corrected: Vec<f64> = p
        .values()
        .iter()
        .enumerate()
        .map(|(t, &pt)| {
            let mut z = params.slope * logit(pt) + params.intercept;
            if !params.feature_coeffs.is_empty() {
                if let Some(f) = features {
                    for (g, x) in params.feature_coeffs.iter().zip(&f[t]) {
                        z += g * x;
                    }
                }
            }
            sigmoid(z)
        })
        .collect();
    clip(&corrected, Stage::Corrected, eta)
}

/// Platt scaling: the featureless residual fit.
pub fn fit_platt(p: &ProbVector, labels: &LabelVector, fit_idx: &[usize]) -> Result<ResidualParams> {
    fit_residual(p, labels, fit_idx, None)
}

const BETA_TOL: f64 = 1e-12;

/// Fit beta calibration by minimizing mean NLL plus the elastic-net penalty
/// centered on the identity map. The L1 kink at the anchor is handled by
/// proximal soft-threshold steps on the shifted coordinates
/// `(a - 1, b + 1, c)`; with no L1 part the fit runs damped Newton instead.
pub fn fit_beta(
    p: &ProbVector,
    labels: &LabelVector,
    fit_idx: &[usize],
    lambda: f64,
    mix: f64,
) -> Result<BetaParams> {
    check_fit_inputs(p, labels, fit_idx)?;
    if lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::invalid(format!("mix must be in [0,1], got {mix}")));
    }
    let rate = class_rate(labels, fit_idx);
    if rate == 0.0 || rate == 1.0 {
        let mut params = BetaParams::identity(lambda, mix);
        params.fallback = true;
        return Ok(params);
    }

    // Shifted coordinates: theta = (a-1, b+1, c). The identity map becomes
    // theta = 0 and contributes the offset logit(p) to every row.
    let n = fit_idx.len();
    let mut design = Vec::with_capacity(n * 3);
    let mut offset = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for &t in fit_idx {
        let u = p.get(t).ln();
        let v = (1.0 - p.get(t)).ln();
        design.extend_from_slice(&[u, v, 1.0]);
        offset.push(u - v);
        y.push(f64::from(labels.get(t)));
    }
    let ridge = [lambda * (1.0 - mix); 3];
    let l1 = lambda * mix;
    let fit = if l1 == 0.0 {
        fit_logistic_newton(&design, 3, &y, Some(&offset), &ridge, &[0.0; 3], 500, BETA_TOL)
    } else {
        fit_logistic_prox(
            &design,
            3,
            &y,
            Some(&offset),
            &[l1; 3],
            &ridge,
            &[0.0; 3],
            500_000,
            BETA_TOL,
        )
    };
    Ok(BetaParams {
        a: fit.coef[0] + 1.0,
        b: fit.coef[1] - 1.0,
        c: fit.coef[2],
        lambda,
        mix,
        fallback: false,
    })
}

/// Apply the beta map elementwise, then clip.
pub fn apply_beta(params: &BetaParams, p: &ProbVector) -> Result<ProbVector> {
    let eta = p.clip_floor();
    let mapped: Vec<f64> = p
        .values()
        .iter()
        .map(|&pt| sigmoid(params.a * pt.ln() + params.b * (1.0 - pt).ln() + params.c))
        .collect();
    clip(&mapped, Stage::Calibrated, eta)
}

/// Fit temperature scaling: the T minimizing mean NLL of
/// `sigmoid(logit(p)/T)` over a bracketed search on `log T`.
pub fn fit_temperature(
    p: &ProbVector,
    labels: &LabelVector,
    fit_idx: &[usize],
) -> Result<TemperatureFit> {
    check_fit_inputs(p, labels, fit_idx)?;
    let rate = class_rate(labels, fit_idx);
    if rate == 0.0 || rate == 1.0 {
        return Ok(TemperatureFit { t: 1.0, fallback: true });
    }
    let logits: Vec<f64> = fit_idx.iter().map(|&t| logit(p.get(t))).collect();
    let ys: Vec<f64> = fit_idx.iter().map(|&t| f64::from(labels.get(t))).collect();
    let nll = |log_t: f64| -> f64 {
        let t = log_t.exp();
        logits
            .iter()
            .zip(&ys)
            .map(|(&l, &y)| nll_of_eta(l / t, y))
            .sum::<f64>()
            / logits.len() as f64
    };
    let log_t = golden_section_min(0.01_f64.ln(), 100.0_f64.ln(), 1e-6, nll);
    Ok(TemperatureFit {
        t: log_t.exp(),
        fallback: false,
    })
}

/// Apply temperature scaling and clip.
pub fn apply_temperature(fit: &TemperatureFit, p: &ProbVector) -> Result<ProbVector> {
    let eta = p.clip_floor();
    let mapped: Vec<f64> = p.values().iter().map(|&pt| sigmoid(logit(pt) / fit.t)).collect();
    clip(&mapped, Stage::Calibrated, eta)
}

/// Pool-adjacent-violators isotonic regression on (score, label) pairs.
///
/// Equal scores are pooled before PAV so the fitted step function is single
/// valued. Levels are clipped into the probability vector's clip interval.
pub fn fit_isotonic(p: &ProbVector, labels: &LabelVector, fit_idx: &[usize]) -> Result<IsotonicMap> {
    check_fit_inputs(p, labels, fit_idx)?;
    let eta = p.clip_floor();
    let mut pairs: Vec<(f64, f64)> = fit_idx
        .iter()
        .map(|&t| (p.get(t), f64::from(labels.get(t))))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (left-edge score, label sum, count) per block; start with one block per
    // distinct score.
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (score, label) in pairs {
        match blocks.last_mut() {
            Some(last) if last.0 == score => {
                last.1 += label;
                last.2 += 1;
            }
            _ => blocks.push((score, label, 1)),
        }
    }
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for block in blocks {
        merged.push(block);
        while merged.len() >= 2 {
            let hi = merged[merged.len() - 1];
            let lo = merged[merged.len() - 2];
            if lo.1 / lo.2 as f64 > hi.1 / hi.2 as f64 {
                let fused = (lo.0, lo.1 + hi.1, lo.2 + hi.2);
                merged.pop();
                merged.pop();
                merged.push(fused);
            } else {
                break;
            }
        }
    }
    Ok(IsotonicMap {
        breakpoints: merged.iter().map(|b| b.0).collect(),
        levels: merged
            .iter()
            .map(|b| (b.1 / b.2 as f64).clamp(eta, 1.0 - eta))
            .collect(),
    })
}

/// Apply the isotonic step function: the level at the greatest breakpoint at
/// or below the score, the first level below the first breakpoint.
pub fn apply_isotonic(map: &IsotonicMap, p: &ProbVector) -> Result<ProbVector> {
    if map.breakpoints.is_empty() {
        return Err(Error::invalid("empty isotonic map".to_string()));
    }
    let eta = p.clip_floor();
    let mapped: Vec<f64> = p
        .values()
        .iter()
        .map(|&score| {
            let idx = match map
                .breakpoints
                .binary_search_by(|b| b.total_cmp(&score))
            {
                Ok(i) => i,
                Err(0) => 0,
                Err(i) => i - 1,
            };
            map.levels[idx]
        })
        .collect();
    clip(&mapped, Stage::Calibrated, eta)
}

/// A fitted distribution-calibration map, serializable for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CalibratorParams {
    Identity,
    Platt(ResidualParams),
    Temperature(TemperatureFit),
    Beta(BetaParams),
    Isotonic(IsotonicMap),
}

impl CalibratorParams {
    /// Whether a degenerate-slice fallback fired during fitting.
    pub fn fallback(&self) -> bool {
        match self {
            CalibratorParams::Identity => false,
            CalibratorParams::Platt(p) => p.fallback,
            CalibratorParams::Temperature(t) => t.fallback,
            CalibratorParams::Beta(b) => b.fallback,
            CalibratorParams::Isotonic(_) => false,
        }
    }

    /// Apply the map to a probability vector.
    pub fn apply(&self, p: &ProbVector) -> Result<ProbVector> {
        match self {
            CalibratorParams::Identity => {
                clip(p.values(), Stage::Calibrated, p.clip_floor())
            }
            CalibratorParams::Platt(params) => {
                let corrected = apply_residual(params, p, None)?;
                clip(corrected.values(), Stage::Calibrated, p.clip_floor())
            }
            CalibratorParams::Temperature(fit) => apply_temperature(fit, p),
            CalibratorParams::Beta(params) => apply_beta(params, p),
            CalibratorParams::Isotonic(map) => apply_isotonic(map, p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stream_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn probs(values: &[f64]) -> ProbVector {
        clip(values, Stage::Raw, 0.001).unwrap()
    }

    fn all_idx(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    /// Labels drawn Bernoulli(p) from a seeded stream.
    fn bernoulli_labels(ps: &[f64], seed: u64) -> LabelVector {
        let mut rng = stream_rng(seed, 0xca11);
        LabelVector::new(
            ps.iter()
                .map(|&p| u8::from(rng.gen::<f64>() < p))
                .collect(),
        )
        .unwrap()
    }

    fn mean_nll(p: &ProbVector, labels: &LabelVector, idx: &[usize]) -> f64 {
        idx.iter()
            .map(|&t| {
                let pt = p.get(t);
                if labels.get(t) == 1 {
                    -pt.ln()
                } else {
                    -(1.0 - pt).ln()
                }
            })
            .sum::<f64>()
            / idx.len() as f64
    }

    fn calibrated_stream(n: usize, seed: u64) -> (ProbVector, LabelVector) {
        let mut rng = stream_rng(seed, 0x57);
        let ps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let labels = bernoulli_labels(&ps, seed ^ 1);
        (probs(&ps), labels)
    }

    #[test]
    fn residual_recovers_identity_on_calibrated_stream() {
        let (p, labels) = calibrated_stream(20_000, 3);
        let fit = fit_residual(&p, &labels, &all_idx(20_000), None).unwrap();
        assert!(!fit.fallback);
        assert!((fit.slope - 1.0).abs() < 0.1, "slope {}", fit.slope);
        assert!(fit.intercept.abs() < 0.1, "intercept {}", fit.intercept);
    }

    #[test]
    fn residual_constant_scores_fall_back_to_intercept() {
        let p = probs(&[0.5; 10]);
        let labels = LabelVector::new(vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
        let fit = fit_residual(&p, &labels, &all_idx(10), None).unwrap();
        assert!(fit.fallback);
        assert_eq!(fit.slope, 0.0);
        assert_abs_diff_eq!(fit.intercept, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_single_class_falls_back() {
        let p = probs(&[0.2, 0.7, 0.9]);
        let labels = LabelVector::new(vec![1, 1, 1]).unwrap();
        let fit = fit_residual(&p, &labels, &all_idx(3), None).unwrap();
        assert!(fit.fallback);
        assert_eq!(fit.slope, 0.0);
        assert_abs_diff_eq!(fit.intercept, logit(0.999), epsilon = 1e-12);
    }

    #[test]
    fn zero_features_change_nothing() {
        let (p, labels) = calibrated_stream(500, 11);
        let plain = fit_residual(&p, &labels, &all_idx(500), None).unwrap();
        let feats = vec![vec![0.0, 0.0]; 500];
        let with = fit_residual(&p, &labels, &all_idx(500), Some(&feats)).unwrap();
        assert_abs_diff_eq!(plain.slope, with.slope, epsilon = 1e-9);
        assert_abs_diff_eq!(plain.intercept, with.intercept, epsilon = 1e-9);
        assert!(with.feature_coeffs.iter().all(|&g| g.abs() < 1e-9));
    }

    #[test]
    fn apply_residual_identity_and_shift() {
        let p = probs(&[0.1, 0.5, 0.9]);
        let id = apply_residual(&ResidualParams::identity(), &p, None).unwrap();
        for (a, b) in p.values().iter().zip(id.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let flat = ResidualParams {
            slope: 0.0,
            intercept: 0.0,
            feature_coeffs: vec![],
            fallback: false,
        };
        let out = apply_residual(&flat, &p, None).unwrap();
        assert!(out.values().iter().all(|&x| (x - 0.5).abs() < 1e-12));

        let shift = ResidualParams {
            slope: 1.0,
            intercept: 4.0_f64.ln(),
            feature_coeffs: vec![],
            fallback: false,
        };
        let out = apply_residual(&shift, &probs(&[0.5]), None).unwrap();
        assert_abs_diff_eq!(out.get(0), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn huge_lambda_pins_beta_at_identity() {
        let (p, labels) = calibrated_stream(400, 19);
        let fit = fit_beta(&p, &labels, &all_idx(400), 1e6, 0.5).unwrap();
        assert!((fit.a - 1.0).abs() < 1e-3);
        assert!((fit.b + 1.0).abs() < 1e-3);
        assert!(fit.c.abs() < 1e-3);
    }

    #[test]
    fn beta_inverts_logit_scale_distortion() {
        let mut rng = stream_rng(23, 0);
        let n = 30_000;
        let p_true: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let labels = bernoulli_labels(&p_true, 24);
        let distorted: Vec<f64> = p_true.iter().map(|&q| sigmoid(3.0 * logit(q))).collect();
        let p = probs(&distorted);
        let fit = fit_beta(&p, &labels, &all_idx(n), 0.0, 0.5).unwrap();
        assert!((fit.a - 1.0 / 3.0).abs() < 0.05, "a = {}", fit.a);
        assert!((fit.b + 1.0 / 3.0).abs() < 0.05, "b = {}", fit.b);
    }

    #[test]
    fn beta_does_not_hurt_calibrated_heldout() {
        let (p, labels) = calibrated_stream(4000, 31);
        let fit_idx: Vec<usize> = (0..2000).collect();
        let hold_idx: Vec<usize> = (2000..4000).collect();
        let params = fit_beta(&p, &labels, &fit_idx, 0.01, 0.5).unwrap();
        let calibrated = apply_beta(&params, &p).unwrap();
        let before = mean_nll(&p, &labels, &hold_idx);
        let after = mean_nll(&calibrated, &labels, &hold_idx);
        assert!(after <= before + 0.005, "before {before}, after {after}");
    }

    #[test]
    fn beta_identity_and_constant_maps() {
        let p = probs(&[0.1, 0.4, 0.8]);
        let id = apply_beta(&BetaParams::identity(0.0, 0.5), &p).unwrap();
        for (a, b) in p.values().iter().zip(id.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let constant = BetaParams {
            a: 0.0,
            b: 0.0,
            c: 1.2,
            lambda: 0.0,
            mix: 0.5,
            fallback: false,
        };
        let out = apply_beta(&constant, &p).unwrap();
        for &x in out.values() {
            assert_abs_diff_eq!(x, sigmoid(1.2), epsilon = 1e-12);
        }
    }

    #[test]
    fn tied_slope_beta_is_platt_on_logits() {
        let p = probs(&[0.05, 0.3, 0.6, 0.95]);
        let beta = BetaParams {
            a: 1.7,
            b: -1.7,
            c: 0.4,
            lambda: 0.0,
            mix: 0.5,
            fallback: false,
        };
        let platt = ResidualParams {
            slope: 1.7,
            intercept: 0.4,
            feature_coeffs: vec![],
            fallback: false,
        };
        let via_beta = apply_beta(&beta, &p).unwrap();
        let via_platt = apply_residual(&platt, &p, None).unwrap();
        for (a, b) in via_beta.values().iter().zip(via_platt.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn nesting_of_in_sample_nll() {
        // Miscalibrated asymmetric stream; in-sample optima must nest:
        // beta (3 params) <= Platt (2) <= identity (0).
        let mut rng = stream_rng(41, 0);
        let n = 2000;
        let p_true: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let labels = bernoulli_labels(&p_true, 42);
        let scores: Vec<f64> = p_true.iter().map(|&q| (q * q * 0.9 + 0.05).min(0.999)).collect();
        let p = probs(&scores);
        let idx = all_idx(n);

        let identity_nll = mean_nll(&p, &labels, &idx);
        let platt = fit_platt(&p, &labels, &idx).unwrap();
        let platt_nll = mean_nll(&apply_residual(&platt, &p, None).unwrap(), &labels, &idx);
        let beta = fit_beta(&p, &labels, &idx, 0.0, 0.5).unwrap();
        let beta_nll = mean_nll(&apply_beta(&beta, &p).unwrap(), &labels, &idx);

        assert!(platt_nll <= identity_nll + 1e-8, "platt {platt_nll} vs id {identity_nll}");
        assert!(beta_nll <= platt_nll + 1e-8, "beta {beta_nll} vs platt {platt_nll}");
    }

    #[test]
    fn temperature_near_one_on_calibrated_stream() {
        let (p, labels) = calibrated_stream(20_000, 51);
        let fit = fit_temperature(&p, &labels, &all_idx(20_000)).unwrap();
        assert!((0.9..=1.1).contains(&fit.t), "T = {}", fit.t);
    }

    #[test]
    fn temperature_recovers_overconfidence_scale() {
        let mut rng = stream_rng(53, 0);
        let n = 30_000;
        let p_true: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let labels = bernoulli_labels(&p_true, 54);
        let distorted: Vec<f64> = p_true.iter().map(|&q| sigmoid(3.0 * logit(q))).collect();
        let p = probs(&distorted);
        let fit = fit_temperature(&p, &labels, &all_idx(n)).unwrap();
        assert!((fit.t - 3.0).abs() <= 0.3, "T = {}", fit.t);
    }

    #[test]
    fn unit_temperature_is_identity() {
        let p = probs(&[0.2, 0.5, 0.77]);
        let out = apply_temperature(&TemperatureFit { t: 1.0, fallback: false }, &p).unwrap();
        for (a, b) in p.values().iter().zip(out.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn isotonic_monotone_consistent_data() {
        let p = probs(&[0.2, 0.8]);
        let labels = LabelVector::new(vec![0, 1]).unwrap();
        let map = fit_isotonic(&p, &labels, &[0, 1]).unwrap();
        assert_eq!(map.levels, vec![0.001, 0.999]);
    }

    #[test]
    fn isotonic_pools_violating_pair() {
        let p = probs(&[0.1, 0.2]);
        let labels = LabelVector::new(vec![1, 0]).unwrap();
        let map = fit_isotonic(&p, &labels, &[0, 1]).unwrap();
        let out = apply_isotonic(&map, &p).unwrap();
        assert_abs_diff_eq!(out.get(0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn isotonic_constant_scores_pool_to_label_mean() {
        let p = probs(&[0.4; 4]);
        let labels = LabelVector::new(vec![1, 0, 0, 0]).unwrap();
        let map = fit_isotonic(&p, &labels, &[0, 1, 2, 3]).unwrap();
        assert_eq!(map.breakpoints.len(), 1);
        assert_abs_diff_eq!(map.levels[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn isotonic_extrapolates_as_step_function() {
        let p = probs(&[0.3, 0.6]);
        let labels = LabelVector::new(vec![0, 1]).unwrap();
        let map = fit_isotonic(&p, &labels, &[0, 1]).unwrap();
        let out = apply_isotonic(&map, &probs(&[0.1, 0.45, 0.9])).unwrap();
        assert_abs_diff_eq!(out.get(0), 0.001, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(1), 0.001, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(2), 0.999, epsilon = 1e-12);
    }

    #[test]
    fn platt_and_temperature_preserve_ranks() {
        let (p, labels) = calibrated_stream(300, 61);
        let idx = all_idx(300);
        let platt = fit_platt(&p, &labels, &idx).unwrap();
        let temp = fit_temperature(&p, &labels, &idx).unwrap();
        let via_platt = apply_residual(&platt, &p, None).unwrap();
        let via_temp = apply_temperature(&temp, &p).unwrap();
        let mut order: Vec<usize> = (0..300).collect();
        order.sort_by(|&a, &b| p.get(a).total_cmp(&p.get(b)));
        for w in order.windows(2) {
            assert!(via_platt.get(w[0]) <= via_platt.get(w[1]) + 1e-12);
            assert!(via_temp.get(w[0]) <= via_temp.get(w[1]) + 1e-12);
        }
    }

    #[test]
    fn beta_family_distortions_have_matching_risk() {
        // In-family monotone distortions: the lambda=0 beta fit on g(p)
        // reaches (nearly) the same in-sample NLL as on p.
        let (p, labels) = calibrated_stream(5000, 71);
        let idx = all_idx(5000);
        let fit_nll = |scores: &ProbVector| -> f64 {
            let params = fit_beta(scores, &labels, &idx, 0.0, 0.5).unwrap();
            mean_nll(&apply_beta(&params, scores).unwrap(), &labels, &idx)
        };
        let base = fit_nll(&p);
        let squared = probs(&p.values().iter().map(|&x| x * x).collect::<Vec<_>>());
        let rooted = probs(&p.values().iter().map(|&x| x.sqrt()).collect::<Vec<_>>());
        assert!((fit_nll(&squared) - base).abs() < 1e-3);
        assert!((fit_nll(&rooted) - base).abs() < 1e-3);
    }

    #[test]
    fn calibrator_params_serialize_with_name_tag() {
        let params = CalibratorParams::Beta(BetaParams::identity(0.01, 0.5));
        let json = serde_json::to_string(&params).unwrap();
        assert!(json.contains("\"name\":\"beta\""));
        assert!(json.contains("\"lambda\":0.01"));
    }
}
