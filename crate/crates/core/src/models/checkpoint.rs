//! Line-oriented text checkpoints.
//!
//! ```text
//! mgce-checkpoint v1
//! model=mlp k=10 d=784 hidden=1024 beta=1.4
//! [mu]
//! <k rows of H floats>
//! [W1]
//! <d rows of H floats>
//! [b1]
//! <1 row of H floats>
//! ```
//!
//! Linear models carry only `[mu]` (`k` rows of `d` floats) and `hidden=0`.
//! Floats are written with 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{LinearModel, MlpModel, Model};
use crate::error::{Error, Result};

const MAGIC: &str = "mgce-checkpoint v1";

fn write_rows(out: &mut String, name: &str, rows: impl Iterator<Item = Vec<f64>>) {
    let _ = writeln!(out, "[{name}]");
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

/// Serializes `model` (trained with loss parameter `beta`).
pub fn to_string(model: &Model, beta: f64) -> String {
    let mut out = String::new();
    let kind = match model {
        Model::Linear(_) => "linear",
        Model::Mlp(_) => "mlp",
    };
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "model={kind} k={} d={} hidden={} beta={beta}",
        model.k(),
        model.input_dim(),
        model.hidden()
    );
    write_rows(&mut out, "mu", model.mu().rows().into_iter().map(|r| r.to_vec()));
    if let Model::Mlp(m) = model {
        write_rows(&mut out, "W1", m.w1.rows().into_iter().map(|r| r.to_vec()));
        write_rows(&mut out, "b1", std::iter::once(m.b1.to_vec()));
    }
    out
}

pub fn save(model: &Model, beta: f64, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model, beta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, f64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, path)
}

/// Parses a checkpoint; `origin` is only used in error messages.
pub fn from_str(text: &str, origin: &Path) -> Result<(Model, f64)> {
    let fail = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fail(format!("missing '{MAGIC}' header")));
    }
    let header = lines.next().ok_or_else(|| fail("missing model line".into()))?;
    let mut kind = None;
    let (mut k, mut d, mut hidden, mut beta) = (None, None, None, None);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| fail(format!("bad header field '{field}'")))?;
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| fail(format!("{key}: {e}")));
        match key {
            "model" => kind = Some(value.to_string()),
            "k" => k = Some(parse_usize(value)?),
            "d" => d = Some(parse_usize(value)?),
            "hidden" => hidden = Some(parse_usize(value)?),
            "beta" => beta = Some(value.parse::<f64>().map_err(|e| fail(format!("beta: {e}")))?),
            other => return Err(fail(format!("unknown header key '{other}'"))),
        }
    }
    let (kind, k, d, hidden, beta) = match (kind, k, d, hidden, beta) {
        (Some(a), Some(b), Some(c), Some(e), Some(f)) => (a, b, c, e, f),
        _ => return Err(fail("incomplete model line".into())),
    };

    let mut sections: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let (_, rows) = sections
            .last_mut()
            .ok_or_else(|| fail("values before first section".into()))?;
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| fail(format!("line {}: {e}", lineno + 3)))?;
        rows.push(row);
    }
    let take = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
        let (_, data) = sections
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| fail(format!("missing [{name}] section")))?;
        if data.len() != rows || data.iter().any(|r| r.len() != cols) {
            return Err(fail(format!("[{name}] must be {rows}×{cols}")));
        }
        Ok(Array2::from_shape_vec((rows, cols), data.concat()).expect("checked shape"))
    };
    let model = match kind.as_str() {
        "linear" => Model::Linear(LinearModel { mu: take("mu", k, d)? }),
        "mlp" => {
            let b1 = take("b1", 1, hidden)?;
            Model::Mlp(MlpModel {
                mu: take("mu", k, hidden)?,
                w1: take("W1", d, hidden)?,
                b1: Array1::from(b1.into_raw_vec_and_offset().0),
            })
        }
        other => return Err(fail(format!("unknown model kind '{other}'"))),
    };
    Ok((model, beta))
}
