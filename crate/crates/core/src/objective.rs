//! Uncertainty-set statistics, the minimax objective `V_beta`, the MAE risk
//! bound, and the single-instance calibration fit.
//!
//! `V_beta(mu) = -tauᵀmu + lambdaᵀ|mu| - E_x[phi_beta(x, mu)]`, where `tau` is
//! the empirical mean of `Phi(x_i, y_i)` and `lambda = lambda0 * s` scales the
//! component-wise standard deviations of the same features.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{self, LossParams, ProbabilityVector};
use crate::models::Model;

/// Default `lambda0` for training runs.
pub const DEFAULT_LAMBDA0: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyStats {
    pub tau: Vec<f64>,
    /// Population standard deviation of each feature component.
    pub s: Vec<f64>,
    pub lambda0: f64,
    /// `lambda0 * s`.
    pub lambda: Vec<f64>,
    pub m: usize,
    /// Confidence level behind `lambda0`, when it came from [`lambda0_from_confidence`].
    pub delta: Option<f64>,
}

impl UncertaintyStats {
    fn from_moments(tau: Vec<f64>, s: Vec<f64>, lambda0: f64) -> Self {
        let lambda = s.iter().map(|v| lambda0 * v).collect();
        UncertaintyStats {
            m: tau.len(),
            tau,
            s,
            lambda0,
            lambda,
            delta: None,
        }
    }

    /// Zero `tau` and `lambda` of dimension `m`.
    pub fn zeros(m: usize) -> Self {
        Self::from_moments(vec![0.0; m], vec![0.0; m], 0.0)
    }

    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self.lambda = self.s.iter().map(|v| lambda0 * v).collect();
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }
}

fn check_lambda0(lambda0: f64) -> Result<()> {
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(Error::domain(format!("lambda0 must be >= 0, got {lambda0}")));
    }
    Ok(())
}

/// Mean and population standard deviation of explicit feature vectors.
pub fn estimate_stats(samples: &[Vec<f64>], lambda0: f64) -> Result<UncertaintyStats> {
    check_lambda0(lambda0)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::domain("cannot estimate statistics from zero samples"))?;
    let m = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != m) {
        return Err(Error::shape(format!("samples of dimension {m}"), bad.len()));
    }
    let n = samples.len() as f64;
    let mut tau = vec![0.0; m];
    for s in samples {
        tau.iter_mut().zip(s).for_each(|(t, v)| *t += v);
    }
    tau.iter_mut().for_each(|t| *t /= n);
    let mut var = vec![0.0; m];
    for s in samples {
        var.iter_mut()
            .zip(s.iter().zip(&tau))
            .for_each(|(acc, (v, t))| *acc += (v - t) * (v - t));
    }
    let s = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(UncertaintyStats::from_moments(tau, s, lambda0))
}

/// Same as [`estimate_stats`] for `Phi(x_i, y_i) = onehot(y_i) ⊗ psi_i`, without
/// materializing the `k·F`-dimensional vectors.
pub fn estimate_stats_kronecker(
    features: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    lambda0: f64,
) -> Result<UncertaintyStats> {
    check_lambda0(lambda0)?;
    let (n, f) = features.dim();
    if n == 0 {
        return Err(Error::domain("cannot estimate statistics from zero samples"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{n} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Index { index: bad, k });
    }
    let nf = n as f64;
    let mut tau = vec![0.0; k * f];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let block = &mut tau[y * f..(y + 1) * f];
        block.iter_mut().zip(row.iter()).for_each(|(t, v)| *t += v);
    }
    tau.iter_mut().for_each(|t| *t /= nf);
    // rows of other classes contribute (0 - tau)^2 each
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&y| counts[y] += 1);
    let mut ss = vec![0.0; k * f];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let (acc, mean) = (&mut ss[y * f..(y + 1) * f], &tau[y * f..(y + 1) * f]);
        acc.iter_mut()
            .zip(row.iter().zip(mean))
            .for_each(|(a, (v, t))| *a += (v - t) * (v - t));
    }
    for y in 0..k {
        let others = (n - counts[y]) as f64;
        for j in 0..f {
            let t = tau[y * f + j];
            ss[y * f + j] += others * t * t;
        }
    }
    let s = ss.into_iter().map(|v| (v / nf).sqrt()).collect();
    Ok(UncertaintyStats::from_moments(tau, s, lambda0))
}

/// `sqrt((ln m + ln(2/delta)) / 2)`: with this `lambda0` the data distribution
/// lies in the uncertainty set with probability at least `1 - delta`.
pub fn lambda0_from_confidence(m: usize, delta: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok((((m as f64).ln() + (2.0 / delta).ln()) / 2.0).sqrt())
}

/// The three terms of `V_beta`; `v_beta` is their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub v_beta: f64,
    pub term_tau: f64,
    pub term_lambda: f64,
    pub term_phi_mean: f64,
}

fn check_stats(model: &Model, stats: &UncertaintyStats) -> Result<()> {
    let m = model.mu().len();
    if stats.tau.len() != m || stats.lambda.len() != m {
        return Err(Error::shape(format!("statistics of dimension {m}"), stats.tau.len()));
    }
    Ok(())
}

/// `V_beta` at the model's current `mu`, averaging `phi` over the rows of `xs`.
pub fn evaluate_objective(
    model: &Model,
    stats: &UncertaintyStats,
    xs: ArrayView2<f64>,
    params: &LossParams,
) -> Result<ObjectiveValue> {
    check_stats(model, stats)?;
    if xs.nrows() == 0 {
        return Err(Error::domain("objective needs at least one instance"));
    }
    let margins = model.forward_batch(xs)?.margins;
    let mut phi_sum = 0.0;
    for row in margins.rows() {
        phi_sum += loss::solve_phi(row.as_slice().expect("standard layout"), params)?.phi;
    }
    objective_from_phi_mean(model, stats, phi_sum / xs.nrows() as f64)
}

/// `V_beta` from an already computed mean potential `E[phi]`.
pub fn objective_from_phi_mean(model: &Model, stats: &UncertaintyStats, phi_mean: f64) -> Result<ObjectiveValue> {
    check_stats(model, stats)?;
    let mu = model.mu_flat();
    let term_tau = -stats.tau.iter().zip(&mu).map(|(t, m)| t * m).sum::<f64>();
    let term_lambda = stats.lambda.iter().zip(&mu).map(|(l, m)| l * m.abs()).sum::<f64>();
    let term_phi_mean = -phi_mean;
    Ok(ObjectiveValue {
        v_beta: term_tau + term_lambda + term_phi_mean,
        term_tau,
        term_lambda,
        term_phi_mean,
    })
}

/// One-pass accumulator of the Kronecker feature moments, for feature sets
/// too large to hold at once.
#[derive(Clone, Debug)]
pub struct KroneckerMoments {
    k: usize,
    f: usize,
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl KroneckerMoments {
    pub fn new(k: usize, f: usize) -> Self {
        KroneckerMoments {
            k,
            f,
            n: 0,
            sum: vec![0.0; k * f],
            sum_sq: vec![0.0; k * f],
        }
    }

    pub fn add_batch(&mut self, features: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        if features.ncols() != self.f || labels.len() != features.nrows() {
            return Err(Error::shape(
                format!("{} labels and {} columns", features.nrows(), self.f),
                format!("{} labels and {} columns", labels.len(), features.ncols()),
            ));
        }
        for (row, &y) in features.rows().into_iter().zip(labels) {
            if y >= self.k {
                return Err(Error::Index { index: y, k: self.k });
            }
            let range = y * self.f..(y + 1) * self.f;
            for ((s, q), v) in self.sum[range.clone()].iter_mut().zip(&mut self.sum_sq[range]).zip(row) {
                *s += v;
                *q += v * v;
            }
        }
        self.n += labels.len();
        Ok(())
    }

    pub fn finish(&self, lambda0: f64) -> Result<UncertaintyStats> {
        check_lambda0(lambda0)?;
        if self.n == 0 {
            return Err(Error::domain("cannot estimate statistics from zero samples"));
        }
        let n = self.n as f64;
        let tau: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let s = self
            .sum_sq
            .iter()
            .zip(&tau)
            .map(|(q, t)| (q / n - t * t).max(0.0).sqrt())
            .collect();
        Ok(UncertaintyStats::from_moments(tau, s, lambda0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskBoundReport {
    pub v_beta: f64,
    pub empirical_mae_risk: f64,
    pub bound_holds: bool,
}

/// Compares the empirical MAE risk on `(xs, labels)` with `V_beta`.
///
/// `V_beta` averages the potential over the same instances; `stats` should
/// come from the training sample.
pub fn risk_bound_report(
    model: &Model,
    stats: &UncertaintyStats,
    xs: ArrayView2<f64>,
    labels: &[usize],
    params: &LossParams,
) -> Result<RiskBoundReport> {
    if labels.len() != xs.nrows() {
        return Err(Error::shape(format!("{} labels", xs.nrows()), labels.len()));
    }
    let objective = evaluate_objective(model, stats, xs, params)?;
    let margins = model.forward_batch(xs)?.margins;
    let mut risk = 0.0;
    for (row, &y) in margins.rows().into_iter().zip(labels) {
        let h = loss::link_probabilities(row.as_slice().expect("standard layout"), params)?;
        risk += 1.0 - h[y];
    }
    let empirical_mae_risk = risk / labels.len() as f64;
    Ok(RiskBoundReport {
        v_beta: objective.v_beta,
        empirical_mae_risk,
        bound_holds: empirical_mae_risk <= objective.v_beta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationFit {
    /// Fitted margins (one-hot features make `mu` and the margins coincide).
    pub mu_star: Vec<f64>,
    pub h_star: ProbabilityVector,
    pub argmax_match: bool,
    /// Largest deviation of `h_star` from normalized `p*^(beta/(beta-1))`.
    pub h_error: f64,
    pub h_match: bool,
    pub iterations: usize,
}

/// Minimizes `sum_y p*(y) * margin_loss(mu, y)` for a single instance with
/// one-hot features, until the gradient `p_beta(mu) - p*` has norm below 1e-6.
///
/// The objective is convex but badly conditioned when `p*` is uneven, so each
/// descent direction is preconditioned with the exact Hessian of the
/// potential (restricted to zero-sum directions) and the step length is
/// chosen by backtracking.
pub fn calibration_fit(p_star: &[f64], beta: f64) -> Result<CalibrationFit> {
    const GRAD_TOL: f64 = 1e-6;
    const MAX_ITERS: usize = 500;
    let p_star = ProbabilityVector::new(p_star.to_vec())?;
    if p_star.iter().any(|&v| v <= 0.0) {
        return Err(Error::domain("p* must lie in the open simplex"));
    }
    if !(beta > 1.0) {
        return Err(Error::domain(format!("calibration fit needs beta > 1, got {beta}")));
    }
    let params = LossParams::with_tol(beta, loss::TIGHT_BISECT_TOL)?;
    let k = p_star.len();
    let objective = |mu: &[f64]| -> Result<f64> {
        let phi = loss::solve_phi(mu, &params)?.phi;
        Ok(-p_star.iter().zip(mu).map(|(p, f)| p * f).sum::<f64>() - phi)
    };
    let mut mu = vec![0.0; k];
    let mut iterations = 0;
    loop {
        let sol = loss::solve_link(&mu, &params)?;
        let grad: Vec<f64> = sol.p.iter().zip(p_star.iter()).map(|(p, q)| p - q).collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < GRAD_TOL {
            break;
        }
        if iterations == MAX_ITERS {
            return Err(Error::Convergence {
                iterations,
                detail: format!("gradient norm {norm:.3e}"),
            });
        }
        iterations += 1;
        let hessian = potential_hessian(&mu, sol.potential.phi, beta);
        let newton = solve_zero_sum(&hessian, &grad).filter(|d| dot(d, &grad) > 0.0);
        let current = objective(&mu)?;
        let mut moved = false;
        for direction in newton.into_iter().chain([grad.clone()]) {
            // cap the largest coordinate move; the Hessian blows up near the support boundary
            let largest = direction.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let direction: Vec<f64> = direction.iter().map(|d| d / largest.max(1.0)).collect();
            let slope = dot(&direction, &grad);
            let mut step = 1.0;
            while step >= 1e-12 {
                let trial: Vec<f64> = mu.iter().zip(&direction).map(|(m, d)| m - step * d).collect();
                if objective(&trial)? <= current - 1e-4 * step * slope {
                    mu = trial;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            return Err(Error::Convergence {
                iterations,
                detail: format!("line search stalled at gradient norm {norm:.3e}"),
            });
        }
        // keep the margins centred; the loss is shift invariant
        let mean = mu.iter().sum::<f64>() / k as f64;
        mu.iter_mut().for_each(|m| *m -= mean);
    }
    let h_star = loss::link_probabilities(&mu, &params)?;
    let target = loss::probs_from_worst_case(&p_star, beta)?;
    let h_error = h_star
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(CalibrationFit {
        argmax_match: loss::argmax(&mu) == loss::argmax(&p_star),
        h_match: h_error <= 1e-4,
        h_error,
        h_star,
        mu_star: mu,
        iterations,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hessian of `-phi` with respect to the margins at the root `phi`.
///
/// With `b_y = ((f_y + phi)/beta + 1)_+`, `w_y = b_y^(beta-2)` on the support and
/// `p = b^(beta-1) / S`, the Jacobian of `p` is
/// `(beta-1)/(beta S) * (diag(w) - w pᵀ - p wᵀ + (Σ w) p pᵀ)`.
fn potential_hessian(margins: &[f64], phi: f64, beta: f64) -> Vec<Vec<f64>> {
    let k = margins.len();
    let bases: Vec<f64> = margins.iter().map(|f| ((f + phi) / beta + 1.0).max(0.0)).collect();
    let s: f64 = bases.iter().map(|b| b.powf(beta - 1.0)).sum();
    let p: Vec<f64> = bases.iter().map(|b| b.powf(beta - 1.0) / s).collect();
    let w: Vec<f64> = bases
        .iter()
        .map(|&b| if b > 0.0 { b.powf(beta - 2.0) } else { 0.0 })
        .collect();
    let wp: f64 = w.iter().sum();
    let scale = (beta - 1.0) / (beta * s);
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let diag = if i == j { w[i] } else { 0.0 };
                    scale * (diag - w[i] * p[j] - p[i] * w[j] + wp * p[i] * p[j])
                })
                .collect()
        })
        .collect()
}

/// Solves `(H + 11ᵀ/k) d = g` by Gaussian elimination; `d` sums to zero when `g` does.
fn solve_zero_sum(hessian: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let k = grad.len();
    let mut a: Vec<Vec<f64>> = hessian
        .iter()
        .zip(grad)
        .map(|(row, g)| {
            let mut r: Vec<f64> = row.iter().map(|h| h + 1.0 / k as f64).collect();
            r.push(*g);
            r
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if !(a[pivot][col].abs() > 1e-300) {
            return None;
        }
        a.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for row in lower.iter_mut() {
            let factor = row[col] / pivot_row[col];
            row[col..].iter_mut().zip(&pivot_row[col..]).for_each(|(r, p)| *r -= factor * p);
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let tail: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][k] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
