//! Accuracy, MAE risk and static calibration error (SCE).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::argmax;

/// Default number of equal-width confidence bins.
pub const DEFAULT_SCE_BINS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SceConfig {
    pub bins: usize,
}

impl Default for SceConfig {
    fn default() -> Self {
        SceConfig { bins: DEFAULT_SCE_BINS }
    }
}

fn check_lengths<P>(probs: &[P], labels: &[usize]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", probs.len()), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::domain("metrics need at least one prediction"));
    }
    Ok(())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<P: AsRef<[f64]>>(probs: &[P], labels: &[usize]) -> Result<f64> {
    check_lengths(probs, labels)?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p.as_ref()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean of `1 - p_i[label_i]`.
pub fn mae_risk<P: AsRef<[f64]>>(probs: &[P], labels: &[usize]) -> Result<f64> {
    check_lengths(probs, labels)?;
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let p = p.as_ref();
        if y >= p.len() {
            return Err(Error::Index { index: y, k: p.len() });
        }
        total += 1.0 - p[y];
    }
    Ok(total / labels.len() as f64)
}

/// One (class, bin) cell of the calibration table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceBin {
    pub class: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of members labelled `class`.
    pub frequency: f64,
    /// Mean predicted probability of `class` among members.
    pub confidence: f64,
}

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Non-empty cells of the per-class reliability table.
pub fn sce_table<P: AsRef<[f64]>>(probs: &[P], labels: &[usize], cfg: SceConfig) -> Result<Vec<SceBin>> {
    check_lengths(probs, labels)?;
    if cfg.bins == 0 {
        return Err(Error::domain("SCE needs at least one bin"));
    }
    let k = probs[0].as_ref().len();
    if let Some(bad) = probs.iter().find(|p| p.as_ref().len() != k) {
        return Err(Error::shape(format!("{k} classes"), bad.as_ref().len()));
    }
    // (count, hits, sum of probabilities) per class and bin
    let mut cells = vec![(0usize, 0usize, 0.0f64); k * cfg.bins];
    for (p, &y) in probs.iter().zip(labels) {
        for (c, &pc) in p.as_ref().iter().enumerate() {
            let cell = &mut cells[c * cfg.bins + bin_of(pc, cfg.bins)];
            cell.0 += 1;
            cell.1 += usize::from(y == c);
            cell.2 += pc;
        }
    }
    let width = 1.0 / cfg.bins as f64;
    Ok(cells
        .into_iter()
        .enumerate()
        .filter(|(_, (count, _, _))| *count > 0)
        .map(|(i, (count, hits, sum))| SceBin {
            class: i / cfg.bins,
            bin: i % cfg.bins,
            lower: (i % cfg.bins) as f64 * width,
            upper: ((i % cfg.bins) + 1) as f64 * width,
            count,
            frequency: hits as f64 / count as f64,
            confidence: sum / count as f64,
        })
        .collect())
}

/// `(1/k) Σ_c Σ_b (n_bc / n) |frequency_bc - confidence_bc|`.
pub fn sce<P: AsRef<[f64]>>(probs: &[P], labels: &[usize], cfg: SceConfig) -> Result<f64> {
    let table = sce_table(probs, labels, cfg)?;
    let n = labels.len() as f64;
    let k = probs[0].as_ref().len() as f64;
    Ok(table
        .iter()
        .map(|b| b.count as f64 / n * (b.frequency - b.confidence).abs())
        .sum::<f64>()
        / k)
}
