//! Softmax-link baselines (CE and GCE) and the minimax MAE loss, all as
//! functions of margins so every loss runs under the same model and optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{self, MarginGradient};
use crate::loss::{self, LossParams};

/// Default GCE exponent for comparison runs.
pub const DEFAULT_GCE_BETA: f64 = 1.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mgce,
    Gce,
    Ce,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mgce => "mgce",
            LossKind::Gce => "gce",
            LossKind::Ce => "ce",
            LossKind::Mae => "mae",
        }
    }

    /// Loss value and margin gradient of one instance. `params.beta` is used
    /// by `Mgce` and `Gce`; `Mae` keeps the tolerance and forces `beta = 1`.
    pub fn loss_and_grad(self, margins: &[f64], label: usize, params: &LossParams) -> Result<(f64, MarginGradient)> {
        match self {
            LossKind::Mgce => gradients::margin_loss_and_grad(margins, label, params),
            LossKind::Gce => gce_loss_and_grad(margins, label, params.beta),
            LossKind::Ce => ce_loss_and_grad(margins, label),
            LossKind::Mae => mae_loss_and_grad(margins, label, params),
        }
    }

    /// Probabilities the trained model predicts: the implicit link for the
    /// minimax losses, softmax for CE and GCE.
    pub fn predict(self, margins: &[f64], params: &LossParams) -> Result<Vec<f64>> {
        match self {
            LossKind::Mgce => Ok(loss::link_probabilities(margins, params)?.into_inner()),
            LossKind::Mae => Ok(loss::link_probabilities(margins, &mae_params(params))?.into_inner()),
            LossKind::Ce | LossKind::Gce => Ok(loss::softmax(margins)),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mgce" => Ok(LossKind::Mgce),
            "gce" => Ok(LossKind::Gce),
            "ce" => Ok(LossKind::Ce),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::Usage(format!("unknown loss '{other}' (expected mgce, gce, ce or mae)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_label(margins: &[f64], label: usize) -> Result<()> {
    if label >= margins.len() {
        return Err(Error::Index {
            index: label,
            k: margins.len(),
        });
    }
    if let Some(bad) = margins.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite margin {bad}")));
    }
    Ok(())
}

/// `logsumexp(f) - f_label` and `softmax(f) - onehot(label)`.
pub fn ce_loss_and_grad(margins: &[f64], label: usize) -> Result<(f64, MarginGradient)> {
    check_label(margins, label)?;
    let loss = loss::log_sum_exp(margins) - margins[label];
    let mut grad = loss::softmax(margins);
    grad[label] -= 1.0;
    Ok((loss, MarginGradient(grad)))
}

/// `beta (1 - s_label^(1/beta))` with `s = softmax(f)`; gradient
/// `s_label^(1/beta) (s - onehot(label))`.
pub fn gce_loss_and_grad(margins: &[f64], label: usize, beta: f64) -> Result<(f64, MarginGradient)> {
    check_label(margins, label)?;
    if !(beta >= 1.0) {
        return Err(Error::domain(format!("GCE needs beta >= 1, got {beta}")));
    }
    let s = loss::softmax(margins);
    // s_y^(1/beta) in log space keeps tiny probabilities accurate
    let log_sy = margins[label] - loss::log_sum_exp(margins);
    let weight = (log_sy / beta).exp();
    let loss = if beta.is_infinite() {
        -log_sy
    } else {
        -beta * (log_sy / beta).exp_m1()
    };
    let grad = s
        .iter()
        .enumerate()
        .map(|(j, sj)| if beta.is_infinite() { 1.0 } else { weight } * (sj - if j == label { 1.0 } else { 0.0 }))
        .collect();
    Ok((loss, MarginGradient(grad)))
}

fn mae_params(params: &LossParams) -> LossParams {
    LossParams {
        beta: 1.0,
        ..*params
    }
}

/// The minimax margin loss at `beta = 1`, keeping the tolerance of `params`.
pub fn mae_loss_and_grad(margins: &[f64], label: usize, params: &LossParams) -> Result<(f64, MarginGradient)> {
    gradients::margin_loss_and_grad(margins, label, &mae_params(params))
}

/// A midpoint-convexity violation `l((a + b)/2) > (l(a) + l(b))/2 + tol`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityViolation {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub label: usize,
    pub midpoint_loss: f64,
    pub chord_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityScan {
    pub pairs: usize,
    pub violations: usize,
    pub worst: Option<ConvexityViolation>,
}

/// Midpoint test of `loss_fn` on `pairs` random margin pairs in `[-range, range]^k`.
pub fn scan_midpoint_convexity<F>(mut loss_fn: F, k: usize, pairs: usize, range: f64, tol: f64, seed: u64) -> Result<ConvexityScan>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scan = ConvexityScan {
        pairs,
        violations: 0,
        worst: None,
    };
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(-range..range)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-range..range)).collect();
        let label = rng.random_range(0..k);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let midpoint_loss = loss_fn(&mid, label)?;
        let chord_loss = 0.5 * (loss_fn(&a, label)? + loss_fn(&b, label)?);
        let gap = midpoint_loss - chord_loss;
        if gap > tol {
            scan.violations += 1;
            if gap > worst_gap {
                worst_gap = gap;
                scan.worst = Some(ConvexityViolation {
                    a,
                    b,
                    label,
                    midpoint_loss,
                    chord_loss,
                });
            }
        }
    }
    Ok(scan)
}
