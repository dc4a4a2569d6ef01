//! Internal numeric kernels: stable sigmoid/logit, damped-Newton logistic
//! regression, proximal-gradient logistic regression with per-coordinate
//! elastic-net penalties, and a golden-section 1-D minimizer.
//!
//! All fits minimize *mean* Bernoulli negative log-likelihood plus the given
//! penalties, so penalty strengths compose with sample size the way the
//! calibrator definitions expect.

/// Numerically stable logistic sigmoid.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse sigmoid; caller must ensure `p` is strictly inside (0, 1).
pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Stable `ln(1 + exp(x))`.
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-loss of a linear score: `ln(1+e^eta) - y*eta`, stable.
pub(crate) fn nll_of_eta(eta: f64, y: f64) -> f64 {
    log1p_exp(eta) - y * eta
}

pub(crate) struct LogisticFit {
    pub coef: Vec<f64>,
    pub mean_nll: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Mean NLL at coefficients `w` for a row-major `n x d` design with optional
/// per-row offset.
fn mean_nll(design: &[f64], d: usize, y: &[f64], offset: Option<&[f64]>, w: &[f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut eta = offset.map_or(0.0, |o| o[i]);
        for j in 0..d {
            eta += design[i * d + j] * w[j];
        }
        total += nll_of_eta(eta, y[i]);
    }
    total / n as f64
}

fn objective(
    design: &[f64],
    d: usize,
    y: &[f64],
    offset: Option<&[f64]>,
    ridge: &[f64],
    w: &[f64],
) -> f64 {
    let mut f = mean_nll(design, d, y, offset, w);
    for j in 0..d {
        f += ridge[j] * w[j] * w[j];
    }
    f
}

fn grad_and_hess(
    design: &[f64],
    d: usize,
    y: &[f64],
    offset: Option<&[f64]>,
    ridge: &[f64],
    w: &[f64],
    grad: &mut [f64],
    hess: &mut [f64],
) {
    let n = y.len();
    grad.fill(0.0);
    hess.fill(0.0);
    for i in 0..n {
        let row = &design[i * d..(i + 1) * d];
        let mut eta = offset.map_or(0.0, |o| o[i]);
        for j in 0..d {
            eta += row[j] * w[j];
        }
        let p = sigmoid(eta);
        let r = p - y[i];
        let v = p * (1.0 - p);
        for j in 0..d {
            grad[j] += r * row[j];
            for k in 0..d {
                hess[j * d + k] += v * row[j] * row[k];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..d {
        grad[j] = grad[j] * inv_n + 2.0 * ridge[j] * w[j];
        for k in 0..d {
            hess[j * d + k] *= inv_n;
        }
        hess[j * d + j] += 2.0 * ridge[j];
    }
}

/// Solve a small dense symmetric system by Gaussian elimination with partial
/// pivoting. Returns false when the matrix is numerically singular.
fn solve_small(a: &mut [f64], b: &mut [f64], d: usize) -> bool {
    for col in 0..d {
        let mut pivot = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[pivot * d + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * d + col].abs() < 1e-300 {
            return false;
        }
        if pivot != col {
            for c in 0..d {
                a.swap(col * d + c, pivot * d + c);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * d + col];
        for r in col + 1..d {
            let factor = a[r * d + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= factor * a[col * d + c];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..d).rev() {
        let mut s = b[col];
        for c in col + 1..d {
            s -= a[col * d + c] * b[c];
        }
        b[col] = s / a[col * d + col];
    }
    true
}

/// Damped-Newton logistic regression with optional per-row offset and
/// per-coordinate ridge penalty. Backtracking guarantees the objective never
/// increases, so the fit is always at least as good as the start point.
pub(crate) fn fit_logistic_newton(
    design: &[f64],
    d: usize,
    y: &[f64],
    offset: Option<&[f64]>,
    ridge: &[f64],
    start: &[f64],
    max_iter: usize,
    tol: f64,
) -> LogisticFit {
    let mut w = start.to_vec();
    let mut f = objective(design, d, y, offset, ridge, &w);
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut converged = false;
    for _ in 0..max_iter {
        grad_and_hess(design, d, y, offset, ridge, &w, &mut grad, &mut hess);
        let mut step = grad.clone();
        let mut h = hess.clone();
        // Jitter the diagonal if the Hessian is singular (separable data).
        if !solve_small(&mut h, &mut step, d) {
            h.copy_from_slice(&hess);
            for j in 0..d {
                h[j * d + j] += 1e-10;
            }
            step.copy_from_slice(&grad);
            if !solve_small(&mut h, &mut step, d) {
                break;
            }
        }
        let descent: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            let ft = objective(design, d, y, offset, ridge, &trial);
            if ft <= f - 1e-4 * t * descent || ft < f {
                let delta = f - ft;
                w = trial;
                f = ft;
                accepted = true;
                if delta.abs() <= tol * f.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            converged = converged || !accepted && grad.iter().all(|g| g.abs() < 1e-8);
            break;
        }
    }
    let mnll = mean_nll(design, d, y, offset, &w);
    LogisticFit {
        coef: w,
        mean_nll: mnll,
        objective: f,
        converged,
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Proximal-gradient (FISTA with adaptive restart) logistic regression with
/// per-coordinate L1 and ridge penalties:
///
/// `min_w  mean_nll(offset + X w) + sum_j ridge_j w_j^2 + sum_j l1_j |w_j|`
///
/// The L1 part is handled exactly by soft-thresholding, which matters at the
/// kink the elastic-net calibrator penalty is centered on.
pub(crate) fn fit_logistic_prox(
    design: &[f64],
    d: usize,
    y: &[f64],
    offset: Option<&[f64]>,
    l1: &[f64],
    ridge: &[f64],
    start: &[f64],
    max_iter: usize,
    tol: f64,
) -> LogisticFit {
    let n = y.len();
    let smooth = |w: &[f64]| objective(design, d, y, offset, ridge, w);
    let grad_smooth = |w: &[f64], g: &mut [f64]| {
        g.fill(0.0);
        for i in 0..n {
            let row = &design[i * d..(i + 1) * d];
            let mut eta = offset.map_or(0.0, |o| o[i]);
            for j in 0..d {
                eta += row[j] * w[j];
            }
            let r = sigmoid(eta) - y[i];
            for j in 0..d {
                g[j] += r * row[j];
            }
        }
        let inv_n = 1.0 / n as f64;
        for j in 0..d {
            g[j] = g[j] * inv_n + 2.0 * ridge[j] * w[j];
        }
    };
    let l1_part = |w: &[f64]| -> f64 { w.iter().zip(l1).map(|(wi, li)| li * wi.abs()).sum() };

    // Lipschitz seed: mean squared row norm / 4 plus the ridge curvature.
    let mut row_sq = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..d {
            let v = design[i * d + j];
            s += v * v;
        }
        row_sq += s;
    }
    let ridge_max = ridge.iter().cloned().fold(0.0_f64, f64::max);
    let mut lip = (row_sq / n as f64) / 4.0 + 2.0 * ridge_max;
    if lip <= 0.0 {
        lip = 1.0;
    }

    let mut w = start.to_vec();
    let mut momentum = w.clone();
    let mut t_prev = 1.0_f64;
    let mut f_total = smooth(&w) + l1_part(&w);
    let mut grad = vec![0.0; d];
    let mut converged = false;

    for _ in 0..max_iter {
        grad_smooth(&momentum, &mut grad);
        let f_momentum = smooth(&momentum);
        // Backtrack on the majorization at the momentum point.
        let mut trial = vec![0.0; d];
        loop {
            for j in 0..d {
                trial[j] = soft_threshold(momentum[j] - grad[j] / lip, l1[j] / lip);
            }
            let mut quad = f_momentum;
            let mut dist_sq = 0.0;
            for j in 0..d {
                let delta = trial[j] - momentum[j];
                quad += grad[j] * delta;
                dist_sq += delta * delta;
            }
            quad += 0.5 * lip * dist_sq;
            if smooth(&trial) <= quad + 1e-15 || lip > 1e14 {
                break;
            }
            lip *= 2.0;
        }
        let f_trial = smooth(&trial) + l1_part(&trial);
        if f_trial > f_total {
            // Objective would rise: restart momentum from the current point.
            momentum.copy_from_slice(&w);
            t_prev = 1.0;
            continue;
        }
        let delta_f = f_total - f_trial;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
        for j in 0..d {
            momentum[j] = trial[j] + ((t_prev - 1.0) / t_next) * (trial[j] - w[j]);
        }
        w.copy_from_slice(&trial);
        t_prev = t_next;
        f_total = f_trial;
        if delta_f <= tol * f_total.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let mnll = mean_nll(design, d, y, offset, &w);
    LogisticFit {
        coef: w,
        mean_nll: mnll,
        objective: f_total,
        converged,
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section_min(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    f: impl Fn(f64) -> f64,
) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
