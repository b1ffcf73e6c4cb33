//! Mini-batch SGD over any margin loss, with per-epoch evaluation and
//! best-validation model selection.

use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::LossKind;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{self, LossParams};
use crate::metrics::{self, SceConfig};
use crate::models::{self, Model, SgdState};
use crate::objective::{self, KroneckerMoments, UncertaintyStats};

/// Rows per forward pass when evaluating whole datasets.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub beta: f64,
    pub lambda0: f64,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bisect_tol: f64,
    pub sce_bins: usize,
    /// Report `wall_ms = 0` so repeated runs produce identical records.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Mgce,
            beta: 1.4,
            lambda0: objective::DEFAULT_LAMBDA0,
            lr: 0.001,
            momentum: 0.9,
            clip_norm: 5.0,
            epochs: 150,
            batch_size: 128,
            seed: 0,
            bisect_tol: loss::DEFAULT_BISECT_TOL,
            sce_bins: metrics::DEFAULT_SCE_BINS,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Parameters of the margin loss being trained, also used for the
    /// potential behind the reported `V_beta`.
    pub fn loss_params(&self) -> Result<LossParams> {
        match self.loss {
            LossKind::Mgce | LossKind::Gce => LossParams::with_tol(self.beta, self.bisect_tol),
            LossKind::Mae => LossParams::with_tol(1.0, self.bisect_tol),
            LossKind::Ce => Ok(LossParams::cross_entropy()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_params()?;
        if self.epochs == 0 || self.batch_size == 0 || self.sce_bins == 0 {
            return Err(Error::domain("epochs, batch_size and sce_bins must be >= 1"));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(Error::domain(format!("lambda0 must be >= 0, got {}", self.lambda0)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return Err(Error::domain("need lr > 0, momentum in [0, 1) and clip_norm > 0"));
        }
        Ok(())
    }
}

/// Metrics of one epoch; test metrics are absent without a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub sce: Option<f64>,
    pub mae_risk: Option<f64>,
    /// Minimax objective at the end of the epoch, over the training sample.
    pub v_beta: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<RunRecord>,
    /// Epoch with the highest validation accuracy, earliest on ties; the last
    /// epoch when there is no validation set.
    pub best_epoch: usize,
    pub best_model: Model,
    pub final_model: Model,
    pub stats: UncertaintyStats,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &RunRecord {
        &self.records[self.best_epoch - 1]
    }
}

/// Predicted probabilities for every row of `ds`.
pub fn predict(model: &Model, ds: &Dataset, kind: LossKind, params: &LossParams) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ds.n());
    for start in (0..ds.n()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(ds.n());
        let fwd = model.forward_batch(ds.features.slice(s![start..end, ..]))?;
        for row in fwd.margins.rows() {
            out.push(kind.predict(row.as_slice().expect("standard layout"), params)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub sce: f64,
    pub mae_risk: f64,
}

pub fn evaluate(model: &Model, ds: &Dataset, kind: LossKind, params: &LossParams, sce: SceConfig) -> Result<Evaluation> {
    let probs = predict(model, ds, kind, params)?;
    Ok(Evaluation {
        accuracy: metrics::accuracy(&probs, &ds.labels)?,
        sce: metrics::sce(&probs, &ds.labels, sce)?,
        mae_risk: metrics::mae_risk(&probs, &ds.labels)?,
    })
}

/// Feature moments (when `moments` is given) and the mean potential over `ds`.
fn training_pass(
    model: &Model,
    ds: &Dataset,
    params: &LossParams,
    mut moments: Option<&mut KroneckerMoments>,
) -> Result<f64> {
    let mut phi_sum = 0.0;
    for start in (0..ds.n()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(ds.n());
        let fwd = model.forward_batch(ds.features.slice(s![start..end, ..]))?;
        if let Some(acc) = moments.as_deref_mut() {
            acc.add_batch(fwd.features.view(), &ds.labels[start..end])?;
        }
        for row in fwd.margins.rows() {
            phi_sum += loss::solve_phi(row.as_slice().expect("standard layout"), params)?.phi;
        }
    }
    Ok(phi_sum / ds.n() as f64)
}

fn refresh_stats(model: &Model, ds: &Dataset, params: &LossParams, lambda0: f64) -> Result<(UncertaintyStats, f64)> {
    let mut acc = KroneckerMoments::new(model.k(), model.feature_dim());
    let phi_mean = training_pass(model, ds, params, Some(&mut acc))?;
    Ok((acc.finish(lambda0)?, phi_mean))
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

/// Trains `model` in place of a copy and returns every epoch's record.
///
/// Each mini-batch averages the per-sample margin gradients, chains them
/// through the model, adds `lambda ⊙ sign(mu)` on the final layer and takes
/// one clipped momentum step. `lambda` comes from the training features: once
/// for a linear model, at the start of every epoch for an MLP.
pub fn train(
    mut model: Model,
    train: &Dataset,
    val: Option<&Dataset>,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&RunRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::domain("empty training set"));
    }
    for ds in std::iter::once(train).chain(val).chain(test) {
        if ds.d() != model.input_dim() || ds.k != model.k() {
            return Err(Error::shape(
                format!("d={} k={}", model.input_dim(), model.k()),
                format!("{} with d={} k={}", ds.name, ds.d(), ds.k),
            ));
        }
    }
    let val = val.filter(|v| v.n() > 0);
    let params = cfg.loss_params()?;
    let sce_cfg = SceConfig { bins: cfg.sce_bins };
    let fixed_features = matches!(model, Model::Linear(_));
    let mut stats = if fixed_features {
        objective::estimate_stats_kronecker(train.features.view(), &train.labels, model.k(), cfg.lambda0)?
    } else {
        refresh_stats(&model, train, &params, cfg.lambda0)?.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut state = SgdState::new(&model);
    let mut records = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_val, mut best_model) = (0, f64::NEG_INFINITY, model.clone());
    let k = model.k();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs = train.features.select(Axis(0), batch);
            let fwd = model.forward_batch(xs.view())?;
            let mut margin_grads = Array2::zeros((batch.len(), k));
            let scale = 1.0 / batch.len() as f64;
            for ((row, mut g_row), &i) in fwd.margins.rows().into_iter().zip(margin_grads.rows_mut()).zip(batch) {
                let (l, g) = cfg
                    .loss
                    .loss_and_grad(row.as_slice().expect("standard layout"), train.labels[i], &params)?;
                loss_sum += l;
                g_row.iter_mut().zip(g.iter()).for_each(|(dst, v)| *dst = v * scale);
            }
            let mut grads = model.backward_batch(xs.view(), &fwd, margin_grads.view())?;
            grads
                .mu
                .iter_mut()
                .zip(model.mu().iter().zip(&stats.lambda))
                .for_each(|(g, (m, l))| *g += l * sign(*m));
            models::sgd_step(&mut model, &grads, &mut state, cfg.lr, cfg.momentum, cfg.clip_norm)?;
        }

        let phi_mean = if fixed_features {
            training_pass(&model, train, &params, None)?
        } else {
            let (fresh, phi_mean) = refresh_stats(&model, train, &params, cfg.lambda0)?;
            stats = fresh;
            phi_mean
        };
        let v_beta = objective::objective_from_phi_mean(&model, &stats, phi_mean)?.v_beta;
        let val_accuracy = match val {
            Some(v) => Some(metrics::accuracy(&predict(&model, v, cfg.loss, &params)?, &v.labels)?),
            None => None,
        };
        let test_eval = match test {
            Some(t) => Some(evaluate(&model, t, cfg.loss, &params, sce_cfg)?),
            None => None,
        };
        let train_loss = loss_sum / train.n() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {train_loss} at epoch {epoch}")));
        }
        let record = RunRecord {
            epoch,
            train_loss,
            val_accuracy,
            test_accuracy: test_eval.as_ref().map(|e| e.accuracy),
            sce: test_eval.as_ref().map(|e| e.sce),
            mae_risk: test_eval.as_ref().map(|e| e.mae_risk),
            v_beta,
            wall_ms: if cfg.deterministic {
                0
            } else {
                started.elapsed().as_millis() as u64
            },
        };
        on_epoch(&record)?;
        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        if score > best_val || best_epoch == 0 || (val.is_none() && epoch == cfg.epochs) {
            best_val = score;
            best_epoch = epoch;
            best_model = model.clone();
        }
        records.push(record);
    }
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_model,
        final_model: model,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synth_gaussian_mixture, SplitSpec};

    fn quick(loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            lr: 0.05,
            epochs: 5,
            batch_size: 32,
            deterministic: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_mixture_is_learned_by_every_loss() {
        let ds = synth_gaussian_mixture(2, 2, 600, 10.0, 3).unwrap();
        let (tr, va) = split(&ds, SplitSpec { val_fraction: 0.2, seed: 1 }).unwrap();
        let test = synth_gaussian_mixture(2, 2, 400, 10.0, 3).unwrap();
        for kind in [LossKind::Mgce, LossKind::Gce, LossKind::Ce, LossKind::Mae] {
            let out = train(Model::linear(2, 2), &tr, Some(&va), Some(&test), &quick(kind), |_| Ok(())).unwrap();
            assert_eq!(out.records.len(), 5);
            let acc = out.best_record().test_accuracy.unwrap();
            assert!(acc >= 0.99, "{kind}: {acc}");
        }
    }

    #[test]
    fn deterministic_runs_repeat() {
        let ds = synth_gaussian_mixture(3, 4, 300, 2.0, 8).unwrap();
        let (tr, va) = split(&ds, SplitSpec::default()).unwrap();
        let run = || {
            train(Model::mlp(4, 8, 3, 2), &tr, Some(&va), None, &quick(LossKind::Mgce), |_| Ok(())).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_model, b.final_model);
        assert!(a.records.iter().all(|r| r.wall_ms == 0 && r.test_accuracy.is_none()));
    }

    #[test]
    fn best_epoch_prefers_earliest_tie() {
        let ds = synth_gaussian_mixture(2, 2, 200, 20.0, 1).unwrap();
        let (tr, va) = split(&ds, SplitSpec { val_fraction: 0.2, seed: 0 }).unwrap();
        let out = train(Model::linear(2, 2), &tr, Some(&va), None, &quick(LossKind::Ce), |_| Ok(())).unwrap();
        let best = out.records.iter().map(|r| r.val_accuracy.unwrap()).fold(0.0, f64::max);
        let first = out.records.iter().position(|r| r.val_accuracy.unwrap() == best).unwrap();
        assert_eq!(out.best_epoch, first + 1);
    }

    #[test]
    fn rejects_mismatched_data() {
        let ds = synth_gaussian_mixture(2, 2, 20, 1.0, 1).unwrap();
        assert!(matches!(
            train(Model::linear(3, 2), &ds, None, None, &quick(LossKind::Ce), |_| Ok(())),
            Err(Error::Shape { .. })
        ));
        let bad = TrainConfig { epochs: 0, ..quick(LossKind::Ce) };
        assert!(train(Model::linear(2, 2), &ds, None, None, &bad, |_| Ok(())).is_err());
    }
}
