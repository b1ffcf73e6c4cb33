//! Run configuration and the commands behind the `mgce` binary.
//!
//! Settings come from built-in defaults, then an optional `key = value` file
//! (`#` starts a comment), then command-line flags; later sources win.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::LossKind;
use crate::data::{self, Dataset, SplitSpec, Standardizer};
use crate::error::{Error, Result};
use crate::gradients::{self, GradCheckConfig, GradCheckReport};
use crate::loss::{self, LossParams};
use crate::metrics::{self, SceBin, SceConfig};
use crate::models::{checkpoint, Model};
use crate::train::{self, Evaluation, RunRecord, TrainConfig};

pub const DEFAULT_BETA_GRID: [f64; 8] = [1.05, 1.18, 1.4, 1.8, 2.5, 4.0, 7.0, 11.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub loss: LossKind,
    pub beta: f64,
    pub lambda0: f64,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub noise_eta: f64,
    pub seed: u64,
    pub model: ModelKind,
    pub hidden: usize,
    /// Dataset directory, or a name under the cache root.
    pub data: String,
    pub label_column: String,
    pub out: PathBuf,
    pub deterministic: bool,
    pub bisect_tol: f64,
    pub sce_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            loss: t.loss,
            beta: t.beta,
            lambda0: t.lambda0,
            lr: t.lr,
            momentum: t.momentum,
            clip_norm: t.clip_norm,
            epochs: t.epochs,
            batch_size: t.batch_size,
            val_fraction: data::DEFAULT_VAL_FRACTION,
            noise_eta: 0.0,
            seed: t.seed,
            model: ModelKind::Mlp,
            hidden: 1024,
            data: String::new(),
            label_column: "label".into(),
            out: PathBuf::from("runs/latest"),
            deterministic: false,
            bisect_tol: t.bisect_tol,
            sce_bins: t.sce_bins,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Usage(format!("bad value '{value}' for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Usage(format!("bad value '{value}' for {key}: expected true or false"))),
    }
}

impl RunConfig {
    /// Sets one field; keys are the field names (dashes allowed for underscores).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "loss" => self.loss = value.parse()?,
            "beta" => self.beta = parse_value(&key, value)?,
            "lambda0" => self.lambda0 = parse_value(&key, value)?,
            "lr" => self.lr = parse_value(&key, value)?,
            "momentum" => self.momentum = parse_value(&key, value)?,
            "clip_norm" => self.clip_norm = parse_value(&key, value)?,
            "epochs" => self.epochs = parse_value(&key, value)?,
            "batch_size" => self.batch_size = parse_value(&key, value)?,
            "val_fraction" => self.val_fraction = parse_value(&key, value)?,
            "noise_eta" => self.noise_eta = parse_value(&key, value)?,
            "seed" => self.seed = parse_value(&key, value)?,
            "model" => {
                self.model = match value {
                    "linear" => ModelKind::Linear,
                    "mlp" => ModelKind::Mlp,
                    other => return Err(Error::Usage(format!("unknown model '{other}' (expected linear or mlp)"))),
                }
            }
            "hidden" => self.hidden = parse_value(&key, value)?,
            "data" => self.data = value.to_string(),
            "label_column" => self.label_column = value.to_string(),
            "out" => self.out = PathBuf::from(value),
            "deterministic" => self.deterministic = parse_bool(&key, value)?,
            "bisect_tol" => self.bisect_tol = parse_value(&key, value)?,
            "sce_bins" => self.sce_bins = parse_value(&key, value)?,
            other => return Err(Error::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected 'key = value'", lineno + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Usage(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_file_text(&text)?;
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            beta: self.beta,
            lambda0: self.lambda0,
            lr: self.lr,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            bisect_tol: self.bisect_tol,
            sce_bins: self.sce_bins,
            deterministic: self.deterministic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: Error| Error::Usage(e.to_string());
        self.train_config().validate().map_err(usage)?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Usage(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if !(0.0..=1.0).contains(&self.noise_eta) {
            return Err(Error::Usage(format!("noise_eta must lie in [0, 1], got {}", self.noise_eta)));
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::Usage("hidden must be >= 1 for the mlp model".into()));
        }
        if self.data.is_empty() {
            return Err(Error::Usage("no dataset given (set 'data')".into()));
        }
        Ok(())
    }

    /// The dataset directory: `data` itself when it exists, else `<cache root>/<data>`.
    pub fn data_path(&self) -> PathBuf {
        let direct = PathBuf::from(&self.data);
        if direct.join("train.csv").exists() {
            direct
        } else {
            data::data_dir().join(&self.data)
        }
    }
}

/// Training, validation and test sets after noise, split and standardization,
/// with what is needed to preprocess new data the same way.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub preprocess: Preprocess,
    /// Rows of the full training file whose label was flipped.
    pub flipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub label_column: String,
    pub label_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Noise goes onto the whole training file before the split, so validation is
/// contaminated too; the test set stays clean.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let dir = cfg.data_path();
    let root = dir.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Usage(format!("bad dataset path '{}'", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let (full, test, labels) = data::load_cached(&root, &name, &cfg.label_column)?;
    let (noisy, mask) = data::inject_symmetric_noise(&full, cfg.noise_eta, cfg.seed.wrapping_add(1))?;
    let (train, val) = data::split(
        &noisy,
        SplitSpec {
            val_fraction: cfg.val_fraction,
            seed: cfg.seed,
        },
    )?;
    let fit = Standardizer::fit(&train)?;
    Ok(PreparedData {
        train: fit.apply(&train)?,
        val: fit.apply(&val)?,
        test: fit.apply(&test)?,
        flipped: mask.iter().filter(|&&m| m).count(),
        preprocess: Preprocess {
            label_column: cfg.label_column.clone(),
            label_names: labels.names().to_vec(),
            mean: fit.mean,
            std: fit.std,
        },
    })
}

fn build_model(cfg: &RunConfig, d: usize, k: usize) -> Model {
    match cfg.model {
        ModelKind::Linear => Model::linear(d, k),
        ModelKind::Mlp => Model::mlp(d, cfg.hidden, k, cfg.seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub dataset: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub k: usize,
    pub d: usize,
    pub flipped_labels: usize,
    pub best_epoch: usize,
    pub best: RunRecord,
    #[serde(rename = "final")]
    pub last: RunRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn train_prepared(cfg: &RunConfig, prepared: &PreparedData, log: &mut dyn Write) -> Result<RunSummary> {
    create_dir(&cfg.out)?;
    let jsonl_path = cfg.out.join("run.jsonl");
    let mut jsonl = fs::File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?;
    let (tr, va, te) = (&prepared.train, &prepared.val, &prepared.test);
    let model = build_model(cfg, tr.d(), tr.k);
    let outcome = train::train(model, tr, Some(va), Some(te), &cfg.train_config(), |record| {
        let line = serde_json::to_string(record).expect("serializable");
        writeln!(jsonl, "{line}").map_err(|e| Error::io(&jsonl_path, e))?;
        let _ = writeln!(
            log,
            "epoch {:>3}  loss {:.4}  val {}  test {}",
            record.epoch,
            record.train_loss,
            fmt_pct(record.val_accuracy),
            fmt_pct(record.test_accuracy)
        );
        Ok(())
    })?;
    checkpoint::save(&outcome.best_model, cfg.beta, &cfg.out.join("best.ckpt"))?;
    write_json(&cfg.out.join("preprocess.json"), &prepared.preprocess)?;
    let summary = RunSummary {
        config: cfg.clone(),
        dataset: tr.name.trim_end_matches("-train").to_string(),
        n_train: tr.n(),
        n_val: va.n(),
        n_test: te.n(),
        k: tr.k,
        d: tr.d(),
        flipped_labels: prepared.flipped,
        best_epoch: outcome.best_epoch,
        best: outcome.best_record().clone(),
        last: outcome.records.last().expect("at least one epoch").clone(),
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|a| format!("{:.2}%", 100.0 * a)).unwrap_or_else(|| "-".into())
}

/// Trains one model; writes `run.jsonl`, `best.ckpt`, `preprocess.json` and
/// `summary.json` under `cfg.out`.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<RunSummary> {
    cfg.validate()?;
    let prepared = prepare_data(cfg)?;
    train_prepared(cfg, &prepared, log)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub best_epoch: usize,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub sce: Option<f64>,
    pub mae_risk: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    /// Beta with the highest best-epoch validation accuracy, earliest in the grid on ties.
    pub selected_beta: f64,
    pub selected: SweepRow,
}

/// Trains once per grid value into `<out>/beta-<value>/` and picks the value
/// with the best validation accuracy. Writes `<out>/sweep.json`.
pub fn cmd_sweep_beta(cfg: &RunConfig, grid: &[f64], log: &mut dyn Write) -> Result<SweepSummary> {
    if grid.is_empty() {
        return Err(Error::Usage("empty beta grid".into()));
    }
    cfg.validate()?;
    let prepared = prepare_data(cfg)?;
    let mut rows: Vec<SweepRow> = Vec::with_capacity(grid.len());
    for &beta in grid {
        let run = RunConfig {
            beta,
            out: cfg.out.join(format!("beta-{beta}")),
            ..cfg.clone()
        };
        run.validate()?;
        let _ = writeln!(log, "beta {beta}");
        let summary = train_prepared(&run, &prepared, log)?;
        rows.push(SweepRow {
            beta,
            best_epoch: summary.best_epoch,
            val_accuracy: summary.best.val_accuracy,
            test_accuracy: summary.best.test_accuracy,
            sce: summary.best.sce,
            mae_risk: summary.best.mae_risk,
        });
    }
    let mut pick = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.val_accuracy.unwrap_or(f64::NEG_INFINITY) > rows[pick].val_accuracy.unwrap_or(f64::NEG_INFINITY) {
            pick = i;
        }
    }
    let summary = SweepSummary {
        selected_beta: rows[pick].beta,
        selected: rows[pick].clone(),
        rows,
    };
    write_json(&cfg.out.join("sweep.json"), &summary)?;
    Ok(summary)
}

pub fn format_sweep(summary: &SweepSummary) -> String {
    let mut out = String::from("beta     epoch  val      test     sce      mae_risk\n");
    for r in &summary.rows {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<8} {:<6} {:<8} {:<8} {:<8} {}{}\n",
            r.beta,
            r.best_epoch,
            opt(r.val_accuracy),
            opt(r.test_accuracy),
            opt(r.sce),
            opt(r.mae_risk),
            if r.beta == summary.selected_beta { "  *" } else { "" }
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub loss: LossKind,
    pub beta: f64,
    pub n: usize,
    #[serde(flatten)]
    pub metrics: Evaluation,
    pub bins: Vec<SceBin>,
}

/// Scores a checkpoint on a CSV with the preprocessing saved next to it.
pub fn cmd_eval(
    checkpoint_path: &Path,
    data_csv: &Path,
    preprocess_path: Option<&Path>,
    kind: LossKind,
    sce: SceConfig,
    bisect_tol: f64,
) -> Result<EvalReport> {
    let (model, beta) = checkpoint::load(checkpoint_path)?;
    let pre_path = preprocess_path.map(Path::to_path_buf).unwrap_or_else(|| {
        checkpoint_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("preprocess.json")
    });
    let text = fs::read_to_string(&pre_path).map_err(|e| Error::io(&pre_path, e))?;
    let pre: Preprocess = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: pre_path.clone(),
        detail: e.to_string(),
    })?;
    let mut labels = data::LabelMap::new();
    for name in &pre.label_names {
        labels.get_or_insert(name);
    }
    let mut ds = data::load_csv_with_labels(data_csv, &pre.label_column, &mut labels)?;
    if labels.len() != pre.label_names.len() {
        return Err(Error::Format {
            path: data_csv.to_path_buf(),
            detail: format!("labels outside the {} training classes", pre.label_names.len()),
        });
    }
    ds.k = model.k();
    let ds = Standardizer {
        mean: pre.mean,
        std: pre.std,
    }
    .apply(&ds)?;
    let params = match kind {
        LossKind::Ce => LossParams::cross_entropy(),
        LossKind::Mae => LossParams::with_tol(1.0, bisect_tol)?,
        LossKind::Mgce | LossKind::Gce => LossParams::with_tol(beta, bisect_tol)?,
    };
    let probs = train::predict(&model, &ds, kind, &params)?;
    Ok(EvalReport {
        checkpoint: checkpoint_path.to_path_buf(),
        data: data_csv.to_path_buf(),
        loss: kind,
        beta,
        n: ds.n(),
        metrics: Evaluation {
            accuracy: metrics::accuracy(&probs, &ds.labels)?,
            sce: metrics::sce(&probs, &ds.labels, sce)?,
            mae_risk: metrics::mae_risk(&probs, &ds.labels)?,
        },
        bins: metrics::sce_table(&probs, &ds.labels, sce)?,
    })
}

/// Runs the finite-difference gradient suite.
pub fn cmd_gradcheck(beta: f64, k: usize, d: usize, trials: usize, seed: u64) -> Result<GradCheckReport> {
    gradients::run_gradcheck(&GradCheckConfig::new(beta, k, d, trials, seed))
}

/// Parses comma-separated reals, naming the position of a bad entry.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .enumerate()
        .map(|(i, item)| {
            let item = item.trim();
            item.parse::<f64>().map_err(|_| {
                Error::Usage(format!("entry {} ('{item}') of '{text}' is not a number", i + 1))
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiReport {
    pub beta: f64,
    pub margins: Vec<f64>,
    pub phi: f64,
    pub h: Vec<f64>,
    pub p: Vec<f64>,
    pub initial_bracket: (f64, f64),
    pub final_bracket: (f64, f64),
    pub iterations: usize,
    /// `ceil(log2(width / tol)) + 1`.
    pub iteration_bound: usize,
}

pub fn iteration_bound(width: f64, tol: f64) -> usize {
    if width < tol {
        0
    } else {
        (width / tol).log2().ceil() as usize + 1
    }
}

pub fn cmd_phi(beta: f64, margins: &[f64], tol: f64) -> Result<PhiReport> {
    let params = LossParams::with_tol(beta, tol)?;
    let sol = loss::solve_link(margins, &params)?;
    let (lo, hi) = sol.potential.initial_bracket;
    let bound = iteration_bound(hi - lo, tol);
    if sol.potential.iterations > bound {
        return Err(Error::Convergence {
            iterations: sol.potential.iterations,
            detail: format!("bisection exceeded its bound of {bound} iterations"),
        });
    }
    Ok(PhiReport {
        beta,
        margins: margins.to_vec(),
        phi: sol.potential.phi,
        h: sol.h.into_inner(),
        p: sol.p.into_inner(),
        initial_bracket: (lo, hi),
        final_bracket: (sol.potential.bracket_lo, sol.potential.bracket_hi),
        iterations: sol.potential.iterations,
        iteration_bound: bound,
    })
}

pub fn format_phi(r: &PhiReport) -> String {
    let vec = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    format!(
        "phi        {:.6}\nh          [{}]\np          [{}]\nbracket    [{:.6}, {:.6}] -> [{:.6}, {:.6}]\niterations {} (bound {})\n",
        r.phi,
        vec(&r.h),
        vec(&r.p),
        r.initial_bracket.0,
        r.initial_bracket.1,
        r.final_bracket.0,
        r.final_bracket.1,
        r.iterations,
        r.iteration_bound
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub beta: f64,
    pub k: usize,
    pub tol: f64,
    pub median_ns_per_solve: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

/// Times `solve_phi` on `batch` random margin vectors in `[-3, 3]^k`, `repeats` times.
pub fn cmd_bench_bisection(betas: &[f64], ks: &[usize], batch: usize, repeats: usize, tol: f64, seed: u64) -> Result<Vec<BenchRow>> {
    if batch == 0 || repeats == 0 {
        return Err(Error::Usage("batch and repeats must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &beta in betas {
        let params = LossParams::with_tol(beta, tol)?;
        for &k in ks {
            let cases: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let mut times = Vec::with_capacity(repeats);
            let (mut total_iters, mut max_iters) = (0usize, 0usize);
            for rep in 0..repeats {
                let started = Instant::now();
                for m in &cases {
                    let sol = loss::solve_phi(m, &params)?;
                    if rep == 0 {
                        total_iters += sol.iterations;
                        max_iters = max_iters.max(sol.iterations);
                    }
                    std::hint::black_box(sol.phi);
                }
                times.push(started.elapsed().as_nanos() as f64 / batch as f64);
            }
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                beta,
                k,
                tol,
                median_ns_per_solve: times[times.len() / 2],
                mean_iterations: total_iters as f64 / batch as f64,
                max_iterations: max_iters,
            });
        }
    }
    Ok(rows)
}

pub fn format_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from("beta       k      tol      ns/solve    iters(mean)  iters(max)\n");
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<6} {:<8.0e} {:<11.0} {:<12.2} {}\n",
            r.beta, r.k, r.tol, r.median_ns_per_solve, r.mean_iterations, r.max_iterations
        ));
    }
    out
}

/// Writes `<out>/train.csv` and `<out>/test.csv` from a Gaussian mixture.
pub fn cmd_synth(k: usize, d: usize, n_train: usize, n_test: usize, separation: f64, seed: u64, out: &Path) -> Result<()> {
    let (train, test) = data::synth_train_test(k, d, n_train, n_test, separation, seed)?;
    create_dir(out)?;
    write_csv(&train, &out.join("train.csv"))?;
    write_csv(&test, &out.join("test.csv"))
}

/// Headed CSV with columns `x1..xd,label`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let io = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut header: Vec<String> = (1..=ds.d()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(io)?;
    for (row, y) in ds.features.rows().into_iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
