//! Statistical inference over experiment outputs: item-level paired
//! permutation tests, percentile bootstrap confidence intervals, the
//! Gaussian multiplier joint max-t test across correlated label budgets, and
//! TOST equivalence tests.
//!
//! All p-values carry add-one smoothing, so they are never exactly zero, and
//! every resampling loop is a pure function of its seed.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::stream_rng;
use crate::{Error, Result};

/// Result of an item-level paired permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTestResult {
    /// Mean per-item loss difference, `mean(loss_a - loss_b)`.
    pub delta: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_flips: usize,
    /// Set when every difference is exactly zero.
    pub degenerate: bool,
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.max(0.0).sqrt())
}

/// t-statistic with the convention that a constant nonzero sample has
/// infinite |t| and an all-zero sample has t = 0.
fn t_statistic(mean: f64, sd: f64, n: usize) -> f64 {
    if sd == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / (sd / (n as f64).sqrt())
    }
}

/// Paired permutation test on per-item losses with random sign flips.
///
/// `p = (1 + #{flips with |t*| >= |t|}) / (1 + n_flips)`.
pub fn paired_permutation(
    loss_a: &[f64],
    loss_b: &[f64],
    n_flips: usize,
    seed: u64,
) -> Result<PairedTestResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::invalid(format!(
            "paired losses of length {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    if loss_a.len() < 2 {
        return Err(Error::invalid("need at least 2 paired losses".to_string()));
    }
    if n_flips == 0 {
        return Err(Error::invalid("n_flips must be positive".to_string()));
    }
    let n = loss_a.len();
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let (mean, sd) = mean_and_sd(&d);
    if sd == 0.0 && mean == 0.0 {
        return Ok(PairedTestResult {
            delta: 0.0,
            t_stat: 0.0,
            p_value: 1.0,
            n_flips,
            degenerate: true,
        });
    }
    let t_obs = t_statistic(mean, sd, n);

    // Under sign flips, the sum of squares is invariant, so each flip only
    // needs the signed sum.
    let sum_sq: f64 = d.iter().map(|x| x * x).sum();
    let mut rng = stream_rng(seed, 0x7065_726d);
    let mut exceed = 0usize;
    for _ in 0..n_flips {
        let mut signed_sum = 0.0;
        for &x in &d {
            if rng.gen::<bool>() {
                signed_sum += x;
            } else {
                signed_sum -= x;
            }
        }
        let mean_f = signed_sum / n as f64;
        let var_f = ((sum_sq - n as f64 * mean_f * mean_f) / (n as f64 - 1.0)).max(0.0);
        let t_f = t_statistic(mean_f, var_f.sqrt(), n);
        if t_f.abs() >= t_obs.abs() {
            exceed += 1;
        }
    }
    Ok(PairedTestResult {
        delta: mean,
        t_stat: t_obs,
        p_value: (1 + exceed) as f64 / (1 + n_flips) as f64,
        n_flips,
        degenerate: false,
    })
}

/// Percentile bootstrap confidence interval for the mean.
pub fn bootstrap_ci(values: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("empty bootstrap sample".to_string()));
    }
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be positive".to_string()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must be in (0,1), got {level}")));
    }
    let n = values.len();
    let mut rng = stream_rng(seed, 0x626f_6f74);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..n {
                s += values[rng.gen_range(0..n)];
            }
            s / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let quantile = |q: f64| -> f64 {
        let pos = q * (n_boot as f64 - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        means[lo] * (1.0 - w) + means[hi] * w
    };
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(tail), quantile(1.0 - tail)))
}

/// Result of the Gaussian multiplier joint max-t test across budgets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointTestResult {
    /// Observed statistic `max_tau |sqrt(B) mean(tau) / sd(tau)|`.
    pub m_obs: f64,
    /// (level, critical value) pairs, increasing in level.
    pub critical_values: Vec<(f64, f64)>,
    pub p_joint: f64,
    pub budgets: Vec<f64>,
    /// Set when any per-budget spread hit the floor (constant column).
    pub degenerate: bool,
}

const SE_FLOOR: f64 = 1e-12;
const EIGEN_FLOOR: f64 = 1e-10;
const JOINT_LEVELS: [f64; 3] = [0.95, 0.99, 0.999];

/// Joint test of `H0: E[T(tau)] = 0` for every budget simultaneously.
///
/// The per-split grid `t_grid[b][j]` holds the budget-`j` statistic of split
/// `b`. Coordinates are standardized per budget; the null max-|t|
/// distribution comes from `n_draws` Gaussian vectors drawn with the
/// empirical cross-budget correlation of the centered statistics.
pub fn multiplier_joint_test(
    t_grid: &[Vec<f64>],
    budgets: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<JointTestResult> {
    let n_splits = t_grid.len();
    if n_splits < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 splits, got {n_splits}"
        )));
    }
    let m = t_grid[0].len();
    if m == 0 {
        return Err(Error::invalid("need at least one budget".to_string()));
    }
    if t_grid.iter().any(|row| row.len() != m) {
        return Err(Error::invalid("ragged statistic grid".to_string()));
    }
    if budgets.len() != m {
        return Err(Error::invalid(format!(
            "{} budget labels for {} columns",
            budgets.len(),
            m
        )));
    }
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be positive".to_string()));
    }

    let b = n_splits as f64;
    let mut means = vec![0.0; m];
    let mut sds = vec![0.0; m];
    let mut degenerate = false;
    for j in 0..m {
        let col: Vec<f64> = t_grid.iter().map(|row| row[j]).collect();
        let (mean, sd) = mean_and_sd(&col);
        means[j] = mean;
        if sd < SE_FLOOR {
            degenerate = true;
            sds[j] = SE_FLOOR;
        } else {
            sds[j] = sd;
        }
    }
    let all_constant = (0..m).all(|j| {
        let first = t_grid[0][j];
        t_grid.iter().all(|row| row[j] == first)
    });
    if all_constant {
        return Ok(JointTestResult {
            m_obs: 0.0,
            critical_values: JOINT_LEVELS.iter().map(|&l| (l, f64::INFINITY)).collect(),
            p_joint: 1.0,
            budgets: budgets.to_vec(),
            degenerate: true,
        });
    }

    let m_obs = (0..m)
        .map(|j| (b.sqrt() * means[j] / sds[j]).abs())
        .fold(0.0_f64, f64::max);

    // Empirical correlation of the centered per-split statistics.
    let mut corr = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let mut s = 0.0;
            for row in t_grid {
                s += (row[j] - means[j]) * (row[k] - means[k]);
            }
            let c = s / ((b - 1.0) * sds[j] * sds[k]);
            corr[(j, k)] = c;
            corr[(k, j)] = c;
        }
    }
    let eigen = SymmetricEigen::new(corr);
    let mut factor = eigen.eigenvectors.clone();
    for j in 0..m {
        let lam = eigen.eigenvalues[j].max(EIGEN_FLOOR);
        for i in 0..m {
            factor[(i, j)] *= lam.sqrt();
        }
    }

    let mut rng = stream_rng(seed, 0x6a6f_696e);
    let mut max_draws: Vec<f64> = Vec::with_capacity(n_draws);
    let mut z = vec![0.0; m];
    for _ in 0..n_draws {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let mut max_abs = 0.0_f64;
        for i in 0..m {
            let mut xi = 0.0;
            for j in 0..m {
                xi += factor[(i, j)] * z[j];
            }
            max_abs = max_abs.max(xi.abs());
        }
        max_draws.push(max_abs);
    }
    let exceed = max_draws.iter().filter(|&&x| x >= m_obs).count();
    let p_joint = (1 + exceed) as f64 / (1 + n_draws) as f64;
    max_draws.sort_by(|a, b| a.total_cmp(b));
    let critical_values = JOINT_LEVELS
        .iter()
        .map(|&level| {
            let idx = ((level * n_draws as f64).ceil() as usize).clamp(1, n_draws) - 1;
            (level, max_draws[idx])
        })
        .collect();
    Ok(JointTestResult {
        m_obs,
        critical_values,
        p_joint,
        budgets: budgets.to_vec(),
        degenerate,
    })
}

/// Result of a two-one-sided-tests equivalence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TostResult {
    /// Max of the two one-sided p-values; small means equivalent within the
    /// margin.
    pub p_value: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub degenerate: bool,
}

/// TOST equivalence test of `|mean| < margin` via two one-sided t-tests.
pub fn tost_equivalence(values: &[f64], margin: f64) -> Result<TostResult> {
    if values.len() < 2 {
        return Err(Error::invalid("need at least 2 values".to_string()));
    }
    if margin <= 0.0 {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    let n = values.len();
    let (mean, sd) = mean_and_sd(values);
    // Relative floor: a constant sample can pick up ~1e-19 of rounding noise
    // in the variance accumulation.
    if sd <= 1e-14 * mean.abs() {
        return Ok(TostResult {
            p_value: 1.0,
            t_lower: 0.0,
            t_upper: 0.0,
            degenerate: true,
        });
    }
    let se = sd / (n as f64).sqrt();
    let t_lower = (mean + margin) / se;
    let t_upper = (mean - margin) / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p_lower = 1.0 - dist.cdf(t_lower);
    let p_upper = dist.cdf(t_upper);
    Ok(TostResult {
        p_value: p_lower.max(p_upper),
        t_lower,
        t_upper,
        degenerate: false,
    })
}

/// Significance stars matching the report convention: *** p < 0.001,
/// ** p < 0.01, * p < 0.05, ns otherwise.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_losses_are_degenerate() {
        let a = vec![0.3, 0.4, 0.5];
        let r = paired_permutation(&a, &a, 100, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn constant_positive_difference_hits_minimum_p() {
        let a = vec![1.0; 100];
        let b = vec![0.5; 100];
        let r = paired_permutation(&a, &b, 10_000, 1).unwrap();
        assert!(!r.degenerate);
        assert_abs_diff_eq!(r.delta, 0.5, epsilon = 1e-12);
        // All-same-sign flips have probability 2^{1-100}; in practice none
        // occur, so p sits at the smoothing floor.
        assert_abs_diff_eq!(r.p_value, 1.0 / 10_001.0, epsilon = 1e-12);
    }

    #[test]
    fn swapping_sides_negates_delta_keeps_p() {
        let a = vec![0.9, 0.2, 0.8, 0.1, 0.7, 0.6];
        let b = vec![0.4, 0.3, 0.5, 0.2, 0.9, 0.1];
        let ab = paired_permutation(&a, &b, 2000, 7).unwrap();
        let ba = paired_permutation(&b, &a, 2000, 7).unwrap();
        assert_abs_diff_eq!(ab.delta, -ba.delta, epsilon = 1e-12);
        assert_abs_diff_eq!(ab.t_stat, -ba.t_stat, epsilon = 1e-12);
        assert_abs_diff_eq!(ab.p_value, ba.p_value, epsilon = 1e-12);
    }

    #[test]
    fn permutation_rejection_rate_is_valid_under_null() {
        // Exchangeable null: both loss vectors from the same stream.
        let mut rejections = 0;
        let mut rng = crate::data::stream_rng(99, 0);
        for trial in 0..1000 {
            let a: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let r = paired_permutation(&a, &b, 200, trial).unwrap();
            if r.p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 1000.0;
        assert!(rate <= 0.07, "null rejection rate {rate}");
    }

    #[test]
    fn bootstrap_ci_on_constant_and_symmetric_data() {
        let (lo, hi) = bootstrap_ci(&[2.5; 30], 500, 0.95, 3).unwrap();
        assert_eq!((lo, hi), (2.5, 2.5));

        let sym: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (lo, hi) = bootstrap_ci(&sym, 2000, 0.95, 4).unwrap();
        assert!(lo < 0.0 && 0.0 < hi, "interval [{lo}, {hi}] misses 0");
    }

    #[test]
    fn bootstrap_ci_width_tracks_clt() {
        let mut rng = crate::data::stream_rng(5, 1);
        let sample: Vec<f64> = (0..200)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (lo, hi) = bootstrap_ci(&sample, 4000, 0.95, 6).unwrap();
        let width = hi - lo;
        let clt_width = 2.0 * 1.96 / (200.0_f64).sqrt();
        assert!(
            (width - clt_width).abs() / clt_width < 0.3,
            "width {width} vs CLT {clt_width}"
        );
        let again = bootstrap_ci(&sample, 4000, 0.95, 6).unwrap();
        assert_eq!((lo, hi), again);
    }

    #[test]
    fn single_budget_critical_values_are_gaussian() {
        let mut rng = crate::data::stream_rng(8, 2);
        let grid: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let r = multiplier_joint_test(&grid, &[1.0], 200_000, 11).unwrap();
        let cv: std::collections::HashMap<_, _> = r
            .critical_values
            .iter()
            .map(|&(l, c)| ((l * 1000.0) as u64, c))
            .collect();
        assert!((cv[&950] - 1.96).abs() < 0.05, "c95 {}", cv[&950]);
        assert!((cv[&990] - 2.576).abs() < 0.08, "c99 {}", cv[&990]);
        assert!((cv[&999] - 3.29).abs() < 0.25, "c999 {}", cv[&999]);
    }

    #[test]
    fn joint_null_rejection_rate_is_calibrated() {
        let mut rejections = 0;
        let n_trials = 500;
        for trial in 0..n_trials {
            let mut rng = crate::data::stream_rng(13, trial);
            let grid: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let r = multiplier_joint_test(&grid, &[1., 2., 3., 4., 5.], 999, trial).unwrap();
            if r.p_joint < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / n_trials as f64;
        assert!((0.03..=0.08).contains(&rate), "joint null rejection rate {rate}");
    }

    #[test]
    fn perfectly_correlated_budgets_match_single_budget() {
        let mut rng = crate::data::stream_rng(17, 3);
        let singles: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let dup_grid: Vec<Vec<f64>> = singles.iter().map(|&x| vec![x; 4]).collect();
        let single_grid: Vec<Vec<f64>> = singles.iter().map(|&x| vec![x]).collect();
        let dup = multiplier_joint_test(&dup_grid, &[1., 2., 3., 4.], 100_000, 19).unwrap();
        let single = multiplier_joint_test(&single_grid, &[1.0], 100_000, 19).unwrap();
        for (a, b) in dup.critical_values.iter().zip(&single.critical_values) {
            assert!((a.1 - b.1).abs() < 0.08, "cv {} vs {}", a.1, b.1);
        }
        assert_abs_diff_eq!(dup.m_obs, single.m_obs, epsilon = 1e-9);
    }

    #[test]
    fn critical_values_monotone_and_shrink_with_correlation() {
        // Build grids with known correlation by mixing a shared factor.
        let build = |rho: f64, seed: u64| -> Vec<Vec<f64>> {
            let mut rng = crate::data::stream_rng(23, seed);
            (0..150)
                .map(|_| {
                    let shared: f64 = rng.sample(StandardNormal);
                    (0..6)
                        .map(|_| {
                            let own: f64 = rng.sample(StandardNormal);
                            rho.sqrt() * shared + (1.0 - rho).sqrt() * own
                        })
                        .collect()
                })
                .collect()
        };
        let budgets = [1., 2., 3., 4., 5., 6.];
        let low = multiplier_joint_test(&build(0.0, 1), &budgets, 50_000, 29).unwrap();
        let high = multiplier_joint_test(&build(0.95, 2), &budgets, 50_000, 29).unwrap();
        for r in [&low, &high] {
            assert!(r.critical_values[0].1 <= r.critical_values[1].1);
            assert!(r.critical_values[1].1 <= r.critical_values[2].1);
        }
        assert!(
            high.critical_values[0].1 < low.critical_values[0].1,
            "correlated c95 {} should undercut independent c95 {}",
            high.critical_values[0].1,
            low.critical_values[0].1
        );
    }

    #[test]
    fn all_constant_grid_is_degenerate() {
        let grid: Vec<Vec<f64>> = (0..20).map(|_| vec![0.25, 0.5]).collect();
        let r = multiplier_joint_test(&grid, &[1.0, 2.0], 100, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_joint, 1.0);
    }

    #[test]
    fn tost_tiny_effect_is_equivalent() {
        // mean ~1e-4, sd ~1e-3, n = 100: t-stats near +/-50.
        let values: Vec<f64> = (0..100)
            .map(|i| 0.0001 + 0.001 * ((i as f64 * 0.613) % 1.0 - 0.4969))
            .collect();
        let r = tost_equivalence(&values, 0.005).unwrap();
        assert!(r.p_value < 1e-6, "p {}", r.p_value);
        assert!(r.t_lower > 15.0 && r.t_upper < -15.0);
    }

    #[test]
    fn tost_boundary_mean_is_half() {
        let values: Vec<f64> =
            (0..400).map(|i| 0.005 + if i % 2 == 0 { 1e-4 } else { -1e-4 }).collect();
        let r = tost_equivalence(&values, 0.005).unwrap();
        assert!((r.p_value - 0.5).abs() < 0.05, "p {}", r.p_value);
    }

    #[test]
    fn tost_huge_spread_is_inconclusive() {
        let values: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
        let r = tost_equivalence(&values, 0.005).unwrap();
        assert!(r.p_value > 0.45, "p {}", r.p_value);
    }

    #[test]
    fn tost_zero_spread_is_degenerate() {
        let r = tost_equivalence(&[0.001; 10], 0.005).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.005), "**");
        assert_eq!(significance_stars(0.03), "*");
        assert_eq!(significance_stars(0.2), "ns");
    }
}
