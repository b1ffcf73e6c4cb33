//! Gradients of the margin loss by implicit differentiation of the potential,
//! chained to the parameters `mu`, and a central-difference oracle to check them.
//!
//! Differentiating `F(f, phi(f)) = 1` gives `∂phi/∂f_y = -p_y`, the worst-case
//! distribution, so the margin loss `-f_y - phi` has gradient `p - onehot(y)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{self, LossParams};
use crate::models::{LinearModel, Model};
use crate::objective::UncertaintyStats;

/// `∂loss/∂f`, one entry per class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginGradient(pub(crate) Vec<f64>);

impl MarginGradient {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for MarginGradient {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `∂objective/∂mu`, flattened in the model's class-major `mu` order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamGradient(pub(crate) Vec<f64>);

impl ParamGradient {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParamGradient {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `∂phi/∂f = -p`.
pub fn phi_grad_margins(margins: &[f64], params: &LossParams) -> Result<Vec<f64>> {
    let p = loss::worst_case_from_margins(margins, params)?;
    Ok(p.iter().map(|v| -v).collect())
}

/// `p - onehot(label)`.
pub fn margin_loss_grad(margins: &[f64], label: usize, params: &LossParams) -> Result<MarginGradient> {
    Ok(margin_loss_and_grad(margins, label, params)?.1)
}

/// Loss and gradient from a single solve of the potential.
pub fn margin_loss_and_grad(margins: &[f64], label: usize, params: &LossParams) -> Result<(f64, MarginGradient)> {
    if label >= margins.len() {
        return Err(Error::Index {
            index: label,
            k: margins.len(),
        });
    }
    let sol = loss::solve_link(margins, params)?;
    let mut grad = sol.p.into_inner();
    grad[label] -= 1.0;
    Ok((-margins[label] - sol.potential.phi, MarginGradient(grad)))
}

fn check_stats(model: &Model, stats: &UncertaintyStats) -> Result<()> {
    let m = model.mu().len();
    if stats.lambda.len() != m {
        return Err(Error::shape(format!("lambda of length {m}"), stats.lambda.len()));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda ⊙ sign(mu) - Phi(x, y) + sum_j p_j Phi(x, j)` with respect to `mu`.
///
/// For an MLP this is the gradient with respect to the final layer, with the
/// hidden activations as features.
pub fn stochastic_param_gradient(
    x: &[f64],
    label: usize,
    model: &Model,
    stats: &UncertaintyStats,
    params: &LossParams,
) -> Result<ParamGradient> {
    check_stats(model, stats)?;
    let psi = model.features(x)?;
    let margins = model.mu().dot(&ndarray::ArrayView1::from(&psi[..]));
    let grad = margin_loss_grad(margins.as_slice().expect("contiguous"), label, params)?;
    let mu = model.mu_flat();
    let f = psi.len();
    let out = mu
        .iter()
        .zip(&stats.lambda)
        .enumerate()
        .map(|(i, (m, l))| l * sign(*m) + grad[i / f] * psi[i % f])
        .collect();
    Ok(ParamGradient(out))
}

/// Per-sample objective term whose gradient is [`stochastic_param_gradient`]:
/// `-Phi(x, y)ᵀmu + lambdaᵀ|mu| - phi(x, mu)`.
pub fn per_sample_objective(
    x: &[f64],
    label: usize,
    model: &Model,
    stats: &UncertaintyStats,
    params: &LossParams,
) -> Result<f64> {
    check_stats(model, stats)?;
    let margins = model.forward_margins(x)?;
    let l1: f64 = stats.lambda.iter().zip(model.mu().iter()).map(|(l, m)| l * m.abs()).sum();
    Ok(l1 + loss::margin_loss(&margins, label, params)?)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_difference_oracle<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = f(&probe)?;
        probe[i] = point[i] - step;
        let down = f(&probe)?;
        probe[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value at coordinate {i}")));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms are below 1e-6.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-6 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub beta: f64,
    pub k: usize,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    /// Bisection tolerance used while checking; must sit far below `fd_step`.
    pub bisect_tol: f64,
    pub fd_step: f64,
    /// Pass threshold on the relative error; `None` picks [`default_threshold`].
    pub threshold: Option<f64>,
}

impl GradCheckConfig {
    pub fn new(beta: f64, k: usize, d: usize, trials: usize, seed: u64) -> Self {
        GradCheckConfig {
            beta,
            k,
            d,
            trials,
            seed,
            bisect_tol: loss::TIGHT_BISECT_TOL,
            fd_step: 1e-6,
            threshold: None,
        }
    }
}

/// 1e-5, loosened to 1e-4 in the near-MAE regime `beta <= 1.05`.
pub fn default_threshold(beta: f64) -> f64 {
    if beta <= 1.05 {
        1e-4
    } else {
        1e-5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub beta: f64,
    pub k: usize,
    pub d: usize,
    pub trials: usize,
    pub threshold: f64,
    /// Worst relative error of `margin_loss_grad` against differences of `margin_loss`.
    pub max_margin_error: f64,
    /// Worst relative error of `stochastic_param_gradient` against differences
    /// of `per_sample_objective`.
    pub max_param_error: f64,
    /// CE mode only: whether the margin gradient equals `softmax - onehot` exactly.
    pub softmax_exact: Option<bool>,
    pub passed: bool,
}

/// Random linear models, inputs, labels and `lambda`; both gradients are
/// compared with central differences at every trial.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.k < 2 || cfg.d < 1 || cfg.trials < 1 {
        return Err(Error::domain("gradcheck needs k >= 2, d >= 1 and trials >= 1"));
    }
    let params = LossParams::with_tol(cfg.beta, cfg.bisect_tol)?;
    let threshold = cfg.threshold.unwrap_or_else(|| default_threshold(cfg.beta));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut max_margin_error, mut max_param_error) = (0.0f64, 0.0f64);
    let mut softmax_exact = params.is_ce_mode().then_some(true);
    for _ in 0..cfg.trials {
        let mu = ndarray::Array2::from_shape_simple_fn((cfg.k, cfg.d), || rng.random_range(-1.0..1.0));
        let mut model = Model::Linear(LinearModel { mu });
        let x: Vec<f64> = (0..cfg.d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..cfg.k);
        let lambda0 = rng.random_range(0.0..0.5);
        let stats = UncertaintyStats::zeros(cfg.k * cfg.d);
        let stats = UncertaintyStats {
            lambda: (0..cfg.k * cfg.d).map(|_| rng.random_range(0.0..1.0) * lambda0).collect(),
            ..stats
        };

        let margins = model.forward_margins(&x)?.into_inner();
        let analytic = margin_loss_grad(&margins, label, &params)?;
        let numeric = finite_difference_oracle(|f| loss::margin_loss(f, label, &params), &margins, cfg.fd_step)?;
        max_margin_error = max_margin_error.max(relative_error(&analytic, &numeric));
        if let Some(exact) = softmax_exact.as_mut() {
            let mut expected = loss::softmax(&margins);
            expected[label] -= 1.0;
            *exact &= expected == *analytic;
        }

        let analytic = stochastic_param_gradient(&x, label, &model, &stats, &params)?;
        let point = model.mu_flat();
        let numeric = finite_difference_oracle(
            |mu| {
                model.set_mu_flat(mu)?;
                per_sample_objective(&x, label, &model, &stats, &params)
            },
            &point,
            cfg.fd_step,
        )?;
        model.set_mu_flat(&point)?;
        max_param_error = max_param_error.max(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckReport {
        beta: cfg.beta,
        k: cfg.k,
        d: cfg.d,
        trials: cfg.trials,
        threshold,
        max_margin_error,
        max_param_error,
        passed: max_margin_error < threshold && max_param_error < threshold && softmax_exact.unwrap_or(true),
        softmax_exact,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn phi_gradient_examples() {
        let p = LossParams::with_tol(2.0, 1e-12).unwrap();
        assert!(close(&phi_grad_margins(&[0.0, 0.0], &p).unwrap(), &[-0.5, -0.5], 1e-12));
        assert!(close(
            &phi_grad_margins(&[0.2, -0.2], &p).unwrap(),
            &[-4.0 / 7.0, -3.0 / 7.0],
            1e-10
        ));
    }

    #[test]
    fn margin_gradient_examples() {
        let p = LossParams::with_tol(2.0, 1e-12).unwrap();
        let g = margin_loss_grad(&[0.2, -0.2], 0, &p).unwrap();
        assert!(close(&g, &[-3.0 / 7.0, 3.0 / 7.0], 1e-10));
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        // confident and correct: p = onehot
        let g = margin_loss_grad(&[1.0, -1.0], 0, &p).unwrap();
        assert!(close(&g, &[0.0, 0.0], 1e-12));
        assert!(matches!(margin_loss_grad(&[0.0, 0.0], 2, &p), Err(Error::Index { .. })));
    }

    #[test]
    fn param_gradient_block_form() {
        let model = Model::linear(2, 2);
        let stats = UncertaintyStats::zeros(4);
        let psi = [1.0, 2.0];
        let g = stochastic_param_gradient(&psi, 0, &model, &stats, &LossParams::new(2.0).unwrap()).unwrap();
        assert!(close(&g, &[-0.5, -1.0, 0.5, 1.0], 1e-15));

        // lambda = 0 and p = onehot(label)
        let model = Model::Linear(LinearModel { mu: array![[5.0, 0.0], [-5.0, 0.0]] });
        let g = stochastic_param_gradient(&[1.0, 0.0], 0, &model, &stats, &LossParams::new(2.0).unwrap()).unwrap();
        assert!(close(&g, &[0.0; 4], 1e-15));

        // sign(0) = 0 leaves zero weights unpenalized
        let stats = UncertaintyStats::zeros(4).with_lambda0(0.0);
        let stats = UncertaintyStats { lambda: vec![1.0; 4], ..stats };
        let g = stochastic_param_gradient(&[0.0, 0.0], 1, &model, &stats, &LossParams::new(2.0).unwrap()).unwrap();
        assert!(close(&g, &[1.0, 0.0, -1.0, 0.0], 1e-15));

        let bad = UncertaintyStats::zeros(3);
        assert!(matches!(
            stochastic_param_gradient(&psi, 0, &Model::linear(2, 2), &bad, &LossParams::new(2.0).unwrap()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn oracle_examples() {
        let a = [1.5, -2.0, 0.25];
        let lin = finite_difference_oracle(|x| Ok(x.iter().zip(&a).map(|(u, v)| u * v).sum()), &[0.3, 0.1, -4.0], 1e-3)
            .unwrap();
        assert!(close(&lin, &a, 1e-10));
        let x = [0.7, -1.2];
        let quad = finite_difference_oracle(|v| Ok(v.iter().map(|t| t * t).sum::<f64>() / 2.0), &x, 1e-4).unwrap();
        assert!(close(&quad, &x, 1e-8));
        assert!(matches!(
            finite_difference_oracle(|_| Ok(f64::NAN), &x, 1e-4),
            Err(Error::Numeric(_))
        ));
        assert!(finite_difference_oracle(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn relative_error_falls_back_to_absolute() {
        assert_eq!(relative_error(&[0.0], &[1e-10]), 1e-10);
        assert!((relative_error(&[1e-3], &[1.1e-3]) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gradcheck_passes_small() {
        for beta in [1.4, 2.0, 5.0] {
            let report = run_gradcheck(&GradCheckConfig::new(beta, 4, 3, 10, 1)).unwrap();
            assert!(report.passed, "{report:?}");
        }
        let ce = run_gradcheck(&GradCheckConfig::new(f64::INFINITY, 3, 2, 5, 2)).unwrap();
        assert_eq!(ce.softmax_exact, Some(true));
        assert!(ce.passed);
    }
}
