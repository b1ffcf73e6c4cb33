//! The MGCE link and loss over classifier margins.
//!
//! For margins `f` and loss parameter `beta >= 1` the implicit potential `phi`
//! is the unique root of
//!
//! ```text
//! F(nu) = sum_y ((f_y + nu) / beta + 1)_+^beta = 1
//! ```
//!
//! `F` is continuous and nondecreasing in `nu`, and the root always lies in
//! `[C - max f, C - min f]` with `C = beta * (k^(-1/beta) - 1)`, so plain
//! bisection over that bracket finds it in `O(log(width / tol))` steps.
//!
//! From the root follow the class probabilities `h_y = ((f_y + phi)/beta + 1)_+^beta`,
//! the worst-case distribution `p_y ∝ ((f_y + phi)/beta + 1)_+^(beta - 1)`, and
//! the margin loss `-f_y - phi`. Once `beta` reaches the CE threshold the
//! closed-form log-sum-exp limit replaces bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection tolerance used for training.
pub const DEFAULT_BISECT_TOL: f64 = 1e-4;

/// Bisection tolerance used by gradient checks and other precision utilities.
pub const TIGHT_BISECT_TOL: f64 = 1e-15;

/// `beta` at or above which the exact softmax / log-sum-exp path is used.
pub const DEFAULT_CE_THRESHOLD: f64 = 1e6;

/// Parameters shared by every loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub beta: f64,
    pub bisect_tol: f64,
    pub ce_threshold: f64,
}

impl LossParams {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_tol(beta, DEFAULT_BISECT_TOL)
    }

    pub fn with_tol(beta: f64, bisect_tol: f64) -> Result<Self> {
        let params = LossParams {
            beta,
            bisect_tol,
            ce_threshold: DEFAULT_CE_THRESHOLD,
        };
        params.validate()?;
        Ok(params)
    }

    /// Cross-entropy limit (`beta = ∞`).
    pub fn cross_entropy() -> Self {
        LossParams {
            beta: f64::INFINITY,
            bisect_tol: DEFAULT_BISECT_TOL,
            ce_threshold: DEFAULT_CE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_nan() || self.beta < 1.0 {
            return Err(Error::domain(format!("beta must be >= 1, got {}", self.beta)));
        }
        if !(self.bisect_tol > 0.0) || !self.bisect_tol.is_finite() {
            return Err(Error::domain(format!(
                "bisection tolerance must be positive, got {}",
                self.bisect_tol
            )));
        }
        if self.ce_threshold.is_nan() {
            return Err(Error::domain("CE threshold is NaN"));
        }
        Ok(())
    }

    pub fn is_ce_mode(&self) -> bool {
        self.beta >= self.ce_threshold
    }
}

/// Class margins `f(x, mu)` of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginVector(Vec<f64>);

impl MarginVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_margins(&values)?;
        Ok(MarginVector(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for MarginVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Wraps `values` after checking they are nonnegative and sum to one (to 1e-9).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empty probability vector"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!("invalid probability entries {values:?}")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbabilityVector(values))
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric(format!("invalid weights {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numeric("weights sum to zero".into()));
        }
        Ok(ProbabilityVector(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        ProbabilityVector(vec![1.0 / k as f64; k])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Result of solving for the implicit potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImplicitPotential {
    pub phi: f64,
    pub iterations: usize,
    /// Final bracket; `bracket_lo <= phi <= bracket_hi`.
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    /// Bracket the search started from.
    pub initial_bracket: (f64, f64),
}

/// Potential together with both distributions it induces.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSolution {
    pub potential: ImplicitPotential,
    /// Classifier probabilities `h`.
    pub h: ProbabilityVector,
    /// Worst-case distribution `p`.
    pub p: ProbabilityVector,
}

fn check_margins(margins: &[f64]) -> Result<()> {
    if margins.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 class margins, got {}",
            margins.len()
        )));
    }
    if let Some(bad) = margins.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite margin {bad}")));
    }
    Ok(())
}

fn check_label(label: usize, k: usize) -> Result<()> {
    if label >= k {
        return Err(Error::Index { index: label, k });
    }
    Ok(())
}

/// `alpha / (alpha - 1)`. `alpha = 1` returns the CE-mode sentinel.
pub fn beta_from_alpha(alpha: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Ok(DEFAULT_CE_THRESHOLD);
    }
    if alpha.is_nan() || alpha < 1.0 {
        return Err(Error::domain(format!("alpha must be > 1, got {alpha}")));
    }
    if alpha.is_infinite() {
        return Ok(1.0);
    }
    Ok(alpha / (alpha - 1.0))
}

/// Probabilistic loss `beta * (1 - h^(1/beta))`, or `-ln h` in CE mode.
pub fn alpha_probability_loss(h_y: f64, params: &LossParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&h_y) {
        return Err(Error::domain(format!("probability {h_y} outside [0, 1]")));
    }
    if params.is_ce_mode() {
        return Ok(-h_y.ln());
    }
    let beta = params.beta;
    // beta * (1 - exp(ln h / beta)) without cancellation for large beta
    Ok(-beta * (h_y.ln() / beta).exp_m1())
}

/// Lower and upper bounds on `sum_y loss(h_y)` over any probability vector.
pub fn class_sum_bounds(beta: f64, k: usize) -> (f64, f64) {
    let kf = k as f64;
    let lower = -beta * kf * (-kf.ln() / beta).exp_m1();
    (lower, beta * (kf - 1.0))
}

/// `beta * (k^(-1/beta) - 1)`, the potential at all-zero margins.
pub fn c_beta(beta: f64, k: usize) -> f64 {
    let ln_k = (k as f64).ln();
    if beta.is_infinite() {
        return -ln_k;
    }
    beta * (-ln_k / beta).exp_m1()
}

#[inline]
fn base(f: f64, nu: f64, beta: f64) -> f64 {
    ((f + nu) / beta + 1.0).max(0.0)
}

#[inline]
fn pow_beta(b: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        b
    } else if beta == 2.0 {
        b * b
    } else {
        b.powf(beta)
    }
}

/// `F(nu) = sum_y ((f_y + nu)/beta + 1)_+^beta`.
pub fn constraint_value(margins: &[f64], beta: f64, nu: f64) -> f64 {
    if beta.is_infinite() {
        return margins.iter().map(|f| (f + nu).exp()).sum();
    }
    margins.iter().map(|&f| pow_beta(base(f, nu, beta), beta)).sum()
}

/// Bracket `(C - max f, C - min f)` containing the root of `F(nu) = 1`.
pub fn phi_bracket(margins: &[f64], beta: f64) -> (f64, f64) {
    let c = c_beta(beta, margins.len());
    let (min, max) = margins
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| {
            (lo.min(f), hi.max(f))
        });
    (c - max, c - min)
}

/// Numerically stable `ln sum_y exp(f_y)`.
pub fn log_sum_exp(margins: &[f64]) -> f64 {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + margins.iter().map(|f| (f - max).exp()).sum::<f64>().ln()
}

pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|f| (f - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Solves `F(phi) = 1` by bisection over [`phi_bracket`].
///
/// The loop halves the bracket while its width is at least `bisect_tol`,
/// moving the upper end when `F(mid) > 1` and the lower end otherwise; the
/// last midpoint is returned. Bounded by `ceil(log2(width / tol)) + 1`
/// iterations. A degenerate bracket (all margins equal) is the exact root.
pub fn solve_phi(margins: &[f64], params: &LossParams) -> Result<ImplicitPotential> {
    check_margins(margins)?;
    if params.is_ce_mode() {
        let phi = -log_sum_exp(margins);
        return Ok(ImplicitPotential {
            phi,
            iterations: 0,
            bracket_lo: phi,
            bracket_hi: phi,
            initial_bracket: (phi, phi),
        });
    }
    let beta = params.beta;
    let (mut lo, mut hi) = phi_bracket(margins, beta);
    let initial_bracket = (lo, hi);
    let mut phi = 0.5 * (lo + hi);
    let mut iterations = 0;
    while hi - lo >= params.bisect_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // tolerance below floating-point resolution of the bracket
            break;
        }
        phi = mid;
        iterations += 1;
        if constraint_value(margins, beta, mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ImplicitPotential {
        phi,
        iterations,
        bracket_lo: lo,
        bracket_hi: hi,
        initial_bracket,
    })
}

/// Solves the potential once and derives `h` and `p` from it.
pub fn solve_link(margins: &[f64], params: &LossParams) -> Result<LinkSolution> {
    let potential = solve_phi(margins, params)?;
    if params.is_ce_mode() {
        let s = softmax(margins);
        return Ok(LinkSolution {
            potential,
            h: ProbabilityVector(s.clone()),
            p: ProbabilityVector(s),
        });
    }
    let beta = params.beta;
    let bases: Vec<f64> = margins.iter().map(|&f| base(f, potential.phi, beta)).collect();
    let h = ProbabilityVector::normalized(bases.iter().map(|&b| pow_beta(b, beta)).collect())?;
    let p = if beta == 1.0 {
        // Uniform over the classes with a positive part; bases within the
        // bisection tolerance of zero are treated as outside the support.
        let support: Vec<f64> = bases
            .iter()
            .map(|&b| if b > params.bisect_tol { 1.0 } else { 0.0 })
            .collect();
        if support.iter().any(|&s| s > 0.0) {
            ProbabilityVector::normalized(support)?
        } else {
            ProbabilityVector::normalized(bases.iter().map(|&b| if b > 0.0 { 1.0 } else { 0.0 }).collect())?
        }
    } else {
        ProbabilityVector::normalized(bases.iter().map(|&b| b.powf(beta - 1.0)).collect())?
    };
    Ok(LinkSolution { potential, h, p })
}

/// Classifier probabilities `h_y = ((f_y + phi)/beta + 1)_+^beta`, renormalized.
pub fn link_probabilities(margins: &[f64], params: &LossParams) -> Result<ProbabilityVector> {
    Ok(solve_link(margins, params)?.h)
}

/// Margin loss `-f_label - phi(f)`.
pub fn margin_loss(margins: &[f64], label: usize, params: &LossParams) -> Result<f64> {
    check_label(label, margins.len())?;
    let potential = solve_phi(margins, params)?;
    Ok(-margins[label] - potential.phi)
}

/// Worst-case distribution for the classifier defined by `margins`.
pub fn worst_case_from_margins(margins: &[f64], params: &LossParams) -> Result<ProbabilityVector> {
    Ok(solve_link(margins, params)?.p)
}

fn check_beta_above_one(beta: f64) -> Result<()> {
    if beta.is_nan() || beta <= 1.0 {
        return Err(Error::domain(format!(
            "beta must be > 1 for the probability-space map, got {beta}; use the margin path for beta = 1"
        )));
    }
    Ok(())
}

/// Worst-case distribution from classifier probabilities: `p ∝ h^((beta-1)/beta)`.
pub fn worst_case_from_probs(h: &[f64], beta: f64) -> Result<ProbabilityVector> {
    check_beta_above_one(beta)?;
    let exponent = if beta.is_infinite() { 1.0 } else { (beta - 1.0) / beta };
    ProbabilityVector::normalized(h.iter().map(|&v| v.max(0.0).powf(exponent)).collect())
}

/// Classifier probabilities from a worst-case distribution: `h ∝ p^(beta/(beta-1))`.
pub fn probs_from_worst_case(p: &[f64], beta: f64) -> Result<ProbabilityVector> {
    check_beta_above_one(beta)?;
    let exponent = if beta.is_infinite() { 1.0 } else { beta / (beta - 1.0) };
    ProbabilityVector::normalized(p.iter().map(|&v| v.max(0.0).powf(exponent)).collect())
}
