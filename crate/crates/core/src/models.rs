//! Margin-producing models over the one-hot Kronecker feature mapping
//! `Phi(x, y) = onehot(y) ⊗ psi(x)`.
//!
//! The final-layer coefficients `mu` are stored as a `k × F` matrix whose row
//! `y` is block `y` of the flat parameter vector, so `f(x)_y = psi(x) · mu[y]`.
//! For the linear model `psi(x) = x`; for the MLP `psi(x) = relu(W1ᵀ x + b1)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::MarginVector;

pub mod checkpoint;

/// `Phi(x, y) = onehot(y) ⊗ psi(x)` with `psi(x)` of length `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMapping {
    pub d: usize,
    pub k: usize,
}

impl FeatureMapping {
    pub fn m(&self) -> usize {
        self.k * self.d
    }

    /// Block-sparse vector with `psi` in block `y`.
    pub fn map(&self, psi: &[f64], y: usize) -> Result<Vec<f64>> {
        if y >= self.k {
            return Err(Error::Index { index: y, k: self.k });
        }
        if psi.len() != self.d {
            return Err(Error::shape(format!("psi of length {}", self.d), psi.len()));
        }
        let mut phi = vec![0.0; self.m()];
        phi[y * self.d..(y + 1) * self.d].copy_from_slice(psi);
        Ok(phi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// `k × d`, row `y` is block `y` of `mu`.
    pub mu: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    /// `d × H`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `k × H`.
    pub mu: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub mu: Array2<f64>,
    pub w1: Option<Array2<f64>>,
    pub b1: Option<Array1<f64>>,
}

/// Forward pass over a batch, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// `B × F` feature rows `psi(x_i)`.
    pub features: Array2<f64>,
    /// `B × k`.
    pub margins: Array2<f64>,
}

impl Model {
    /// Linear model with `mu = 0`.
    pub fn linear(d: usize, k: usize) -> Self {
        Model::Linear(LinearModel {
            mu: Array2::zeros((k, d)),
        })
    }

    /// One-hidden-layer ReLU network. Hidden weights are uniform in
    /// `±sqrt(6 / (d + H))`, hidden biases and `mu` start at zero.
    pub fn mlp(d: usize, hidden: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (d + hidden) as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((d, hidden), || rng.random_range(-limit..limit));
        Model::Mlp(MlpModel {
            w1,
            b1: Array1::zeros(hidden),
            mu: Array2::zeros((k, hidden)),
        })
    }

    pub fn k(&self) -> usize {
        self.mu().nrows()
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.mu.ncols(),
            Model::Mlp(m) => m.w1.nrows(),
        }
    }

    /// Dimension of `psi(x)`.
    pub fn feature_dim(&self) -> usize {
        self.mu().ncols()
    }

    pub fn hidden(&self) -> usize {
        match self {
            Model::Linear(_) => 0,
            Model::Mlp(m) => m.w1.ncols(),
        }
    }

    pub fn mapping(&self) -> FeatureMapping {
        FeatureMapping {
            d: self.feature_dim(),
            k: self.k(),
        }
    }

    pub fn mu(&self) -> &Array2<f64> {
        match self {
            Model::Linear(m) => &m.mu,
            Model::Mlp(m) => &m.mu,
        }
    }

    pub fn mu_mut(&mut self) -> &mut Array2<f64> {
        match self {
            Model::Linear(m) => &mut m.mu,
            Model::Mlp(m) => &mut m.mu,
        }
    }

    /// Flat `mu` in block order.
    pub fn mu_flat(&self) -> Vec<f64> {
        self.mu().iter().copied().collect()
    }

    pub fn set_mu_flat(&mut self, values: &[f64]) -> Result<()> {
        let mu = self.mu_mut();
        if values.len() != mu.len() {
            return Err(Error::shape(format!("mu of length {}", mu.len()), values.len()));
        }
        mu.iter_mut().zip(values).for_each(|(m, v)| *m = *v);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!("input of length {}", self.input_dim()), x.len()));
        }
        Ok(())
    }

    /// `psi(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(match self {
            Model::Linear(_) => x.to_vec(),
            Model::Mlp(m) => {
                let pre = m.w1.t().dot(&ArrayView1::from(x)) + &m.b1;
                pre.iter().map(|v| v.max(0.0)).collect()
            }
        })
    }

    pub fn feature_map(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if y >= self.k() {
            return Err(Error::Index { index: y, k: self.k() });
        }
        let psi = self.features(x)?;
        self.mapping().map(&psi, y)
    }

    pub fn forward_margins(&self, x: &[f64]) -> Result<MarginVector> {
        let psi = self.features(x)?;
        let margins = self.mu().dot(&ArrayView1::from(&psi[..]));
        MarginVector::new(margins.to_vec())
    }

    /// Features `psi` for every row of `xs`.
    pub fn batch_features(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} input columns", self.input_dim()), xs.ncols()));
        }
        Ok(match self {
            Model::Linear(_) => xs.as_standard_layout().into_owned(),
            Model::Mlp(m) => {
                let mut pre = xs.dot(&m.w1);
                pre += &m.b1;
                pre.mapv_inplace(|v| v.max(0.0));
                pre
            }
        })
    }

    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<BatchForward> {
        let features = self.batch_features(xs)?;
        let margins = features.dot(&self.mu().t()).as_standard_layout().into_owned();
        Ok(BatchForward { features, margins })
    }

    /// Chains a margin gradient `∂L/∂f` of one instance into parameter gradients.
    pub fn backward(&self, x: &[f64], margin_grad: &[f64]) -> Result<ModelGradients> {
        self.check_input(x)?;
        if margin_grad.len() != self.k() {
            return Err(Error::shape(format!("margin gradient of length {}", self.k()), margin_grad.len()));
        }
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let fwd = self.forward_batch(xs)?;
        let g = ArrayView2::from_shape((1, margin_grad.len()), margin_grad).expect("row view");
        self.backward_batch(xs, &fwd, g)
    }

    /// Sums per-row contributions of `margin_grads` (`B × k`) into parameter gradients.
    pub fn backward_batch(
        &self,
        xs: ArrayView2<f64>,
        fwd: &BatchForward,
        margin_grads: ArrayView2<f64>,
    ) -> Result<ModelGradients> {
        if margin_grads.dim() != fwd.margins.dim() {
            return Err(Error::shape(
                format!("{:?} margin gradients", fwd.margins.dim()),
                format!("{:?}", margin_grads.dim()),
            ));
        }
        let mu_grad = margin_grads.t().dot(&fwd.features);
        match self {
            Model::Linear(_) => Ok(ModelGradients {
                mu: mu_grad,
                w1: None,
                b1: None,
            }),
            Model::Mlp(m) => {
                let mut hidden_grad = margin_grads.dot(&m.mu);
                // ReLU'(0) = 0
                hidden_grad.zip_mut_with(&fwd.features, |g, &h| {
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                });
                let w1_grad = xs.t().dot(&hidden_grad);
                let b1_grad = hidden_grad.sum_axis(Axis(0));
                Ok(ModelGradients {
                    mu: mu_grad,
                    w1: Some(w1_grad),
                    b1: Some(b1_grad),
                })
            }
        }
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Linear(m) => vec![m.mu.as_slice_mut().expect("standard layout")],
            Model::Mlp(m) => vec![
                m.mu.as_slice_mut().expect("standard layout"),
                m.w1.as_slice_mut().expect("standard layout"),
                m.b1.as_slice_mut().expect("standard layout"),
            ],
        }
    }
}

impl ModelGradients {
    pub fn zeros_like(model: &Model) -> Self {
        match model {
            Model::Linear(m) => ModelGradients {
                mu: Array2::zeros(m.mu.dim()),
                w1: None,
                b1: None,
            },
            Model::Mlp(m) => ModelGradients {
                mu: Array2::zeros(m.mu.dim()),
                w1: Some(Array2::zeros(m.w1.dim())),
                b1: Some(Array1::zeros(m.b1.dim())),
            },
        }
    }

    /// Parameter blocks in the same order as the model's.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.mu.as_slice().expect("standard layout")];
        if let Some(w1) = &self.w1 {
            out.push(w1.as_slice().expect("standard layout"));
        }
        if let Some(b1) = &self.b1 {
            out.push(b1.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.mu.as_slice_mut().expect("standard layout")];
        if let Some(w1) = &mut self.w1 {
            out.push(w1.as_slice_mut().expect("standard layout"));
        }
        if let Some(b1) = &mut self.b1 {
            out.push(b1.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Momentum buffer for [`sgd_step`].
#[derive(Clone, Debug)]
pub struct SgdState {
    velocity: ModelGradients,
}

impl SgdState {
    pub fn new(model: &Model) -> Self {
        SgdState {
            velocity: ModelGradients::zeros_like(model),
        }
    }
}

/// Clips `grads` to global norm `clip_norm`, then `v ← momentum·v + g`, `θ ← θ − lr·v`.
pub fn sgd_step(
    model: &mut Model,
    grads: &ModelGradients,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    clip_norm: f64,
) -> Result<()> {
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) || !(clip_norm > 0.0) {
        return Err(Error::domain(format!(
            "invalid optimizer settings lr={lr} momentum={momentum} clip_norm={clip_norm}"
        )));
    }
    let norm = grads.norm();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    let clip = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let params = model.param_slices_mut();
    let velocity = state.velocity.slices_mut();
    let grads = grads.slices();
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!("{} parameter blocks", params.len()), grads.len()));
    }
    for ((theta, v), g) in params.into_iter().zip(velocity).zip(grads) {
        if theta.len() != g.len() {
            return Err(Error::shape(theta.len(), g.len()));
        }
        for ((t, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + clip * gi;
            *t -= lr * *vi;
        }
    }
    Ok(())
}
