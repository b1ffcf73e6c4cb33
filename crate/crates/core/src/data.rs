//! Datasets: CSV ingestion, synthetic Gaussian mixtures, standardization,
//! seeded splits and symmetric label noise.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// Environment variable overriding the dataset cache root.
pub const DATA_DIR_ENV: &str = "MGCE_DATA_DIR";

/// Default fraction of the training data held out for validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `n × d`.
    pub features: Array2<f64>,
    /// Class indices in `0..k`.
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!("{} labels", features.nrows()), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index { index: bad, k });
        }
        Ok(Dataset {
            name: name.into(),
            features: features.as_standard_layout().into_owned(),
            labels,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i).to_slice().expect("standard layout")
    }
}

/// Label strings to class indices in order of first appearance. Share one map
/// between the files of a dataset so they agree on the indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LabelMap {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Reads a headed CSV; every column other than `label_column` is a numeric feature.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut map = LabelMap::new();
    let ds = load_csv_with_labels(path, label_column, &mut map)?;
    Ok(ds)
}

/// [`load_csv`] with a caller-owned label map. The returned `k` is the map
/// size after this file.
pub fn load_csv_with_labels(path: &Path, label_column: &str, labels: &mut LabelMap) -> Result<Dataset> {
    let format = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => format(format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| format(e.to_string()))?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| format(format!("missing label column '{label_column}'")))?;
    let d = header.len() - 1;
    let mut values = Vec::new();
    let mut ys = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format(format!("row {}: {e}", row + 1)))?;
        if record.len() != header.len() {
            return Err(format(format!("row {} has {} fields, expected {}", row + 1, record.len(), header.len())));
        }
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                ys.push(labels.get_or_insert(cell));
                continue;
            }
            let v: f64 = cell.parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
                path: path.to_path_buf(),
                row: row + 1,
                column: header[col].to_string(),
                detail: format!("'{cell}': {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: row + 1,
                    column: header[col].to_string(),
                    detail: format!("non-finite value '{cell}'"),
                });
            }
            values.push(v);
        }
    }
    let n = ys.len();
    let name = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let features = Array2::from_shape_vec((n, d), values).expect("row lengths checked");
    Dataset::new(name, features, ys, labels.len().max(2))
}

/// Cache root: `$MGCE_DATA_DIR`, else `data/`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads `<root>/<name>/train.csv` and `<root>/<name>/test.csv` with a shared
/// label map; both datasets get the final class count.
pub fn load_cached(root: &Path, name: &str, label_column: &str) -> Result<(Dataset, Dataset, LabelMap)> {
    let mut map = LabelMap::new();
    let dir = root.join(name);
    let mut train = load_csv_with_labels(&dir.join("train.csv"), label_column, &mut map)?;
    let mut test = load_csv_with_labels(&dir.join("test.csv"), label_column, &mut map)?;
    if train.d() != test.d() {
        return Err(Error::Format {
            path: dir.join("test.csv"),
            detail: format!("{} feature columns, train has {}", test.d(), train.d()),
        });
    }
    let k = map.len().max(2);
    train.k = k;
    test.k = k;
    Ok((train, test, map))
}

/// Per-feature affine transform fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance features are only centred.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.n() == 0 {
            return Err(Error::domain("cannot standardize with an empty training set"));
        }
        let mean: Array1<f64> = train.features.mean_axis(Axis(0)).expect("non-empty");
        let std = train.features.std_axis(Axis(0), 0.0);
        Ok(Standardizer {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d() != self.mean.len() {
            return Err(Error::shape(format!("{} features", self.mean.len()), ds.d()));
        }
        let mut out = ds.clone();
        for mut row in out.features.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s;
                }
            }
        }
        Ok(out)
    }
}

/// Z-scores `train` and `others` with the training mean and standard deviation.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let fit = Standardizer::fit(train)?;
    let others = others.iter().map(|ds| fit.apply(ds)).collect::<Result<Vec<_>>>()?;
    Ok((fit.apply(train)?, others))
}

/// Replaces each label with probability `eta` by one of the other `k - 1`
/// classes chosen uniformly. The mask marks changed rows.
pub fn inject_symmetric_noise(ds: &Dataset, eta: f64, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("noise rate must lie in [0, 1], got {eta}")));
    }
    if ds.k < 2 {
        return Err(Error::domain("symmetric noise needs k >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    let mut mask = vec![false; ds.n()];
    for (y, flipped) in out.labels.iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() < eta {
            let other = rng.random_range(0..ds.k - 1);
            *y = if other >= *y { other + 1 } else { other };
            *flipped = true;
        }
    }
    Ok((out, mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: 0,
        }
    }
}

/// Seeded shuffle, then the last `round(n · val_fraction)` rows go to validation.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::domain(format!("val_fraction must lie in [0, 1), got {}", spec.val_fraction)));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_val = ((ds.n() as f64) * spec.val_fraction).round() as usize;
    let n_val = n_val.min(ds.n().saturating_sub(1));
    let (train, val) = order.split_at(ds.n() - n_val);
    Ok((
        ds.subset(train, format!("{}-train", ds.name)),
        ds.subset(val, format!("{}-val", ds.name)),
    ))
}

/// Balanced mixture of unit-covariance Gaussians with class means at distance
/// `separation` from the origin. Means are orthonormal directions when
/// `k <= d`, random unit vectors otherwise.
pub fn synth_gaussian_mixture(k: usize, d: usize, n: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || d < 1 || n < 1 {
        return Err(Error::domain(format!("need k >= 2, d >= 1, n >= 1 (got k={k}, d={d}, n={n})")));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::domain(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    while means.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if k <= d {
            for m in &means {
                let dot: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(m).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        means.push(v.into_iter().map(|a| a / norm).collect());
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((n, d));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (v, m) in row.iter_mut().zip(&means[y]) {
            let z: f64 = rng.sample(StandardNormal);
            *v = separation * m + z;
        }
    }
    Dataset::new(format!("gauss-k{k}-d{d}"), features, labels, k)
}

/// Train and test sets drawn from one mixture (the first `n_train` rows train).
pub fn synth_train_test(k: usize, d: usize, n_train: usize, n_test: usize, separation: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let all = synth_gaussian_mixture(k, d, n_train + n_test, separation, seed)?;
    let rows: Vec<usize> = (0..all.n()).collect();
    let (tr, te) = rows.split_at(n_train);
    Ok((all.subset(tr, "synth-train"), all.subset(te, "synth-test")))
}
