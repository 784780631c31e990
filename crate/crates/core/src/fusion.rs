//! Late fusion of per-stream score matrices.
//!
//! Each classifier's margins are z-scored per type column, then combined
//! with one non-negative weight per source. Weights can be tuned by
//! exhaustive search over a simplex grid against dev-set mean type AP.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelStore;
use crate::error::{Error, Result};
use crate::eval::{evaluate, RelevanceRule};
use crate::svm::ScoreMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct FusionWeights {
    weights: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RawWeights {
    weights: BTreeMap<String, f64>,
}

impl TryFrom<RawWeights> for FusionWeights {
    type Error = Error;

    fn try_from(raw: RawWeights) -> Result<Self> {
        FusionWeights::new(raw.weights)
    }
}

impl FusionWeights {
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((tag, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight for {tag} is {w}")));
        }
        if !weights.values().any(|&w| w > 0.0) {
            return Err(Error::InvalidWeights("no positive weight".into()));
        }
        Ok(FusionWeights { weights })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|(s, w)| (s.into(), w)).collect())
    }

    /// Equal weight on every tag.
    pub fn uniform(tags: impl IntoIterator<Item = String>) -> Self {
        let tags: Vec<String> = tags.into_iter().collect();
        let w = 1.0 / tags.len().max(1) as f64;
        FusionWeights {
            weights: tags.into_iter().map(|t| (t, w)).collect(),
        }
    }

    pub fn get(&self, tag: &str) -> Option<f64> {
        self.weights.get(tag).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(t, &w)| (t.as_str(), w))
    }

    /// Same ratios, summing to one.
    pub fn normalized(&self) -> FusionWeights {
        let total: f64 = self.weights.values().sum();
        FusionWeights {
            weights: self
                .weights
                .iter()
                .map(|(t, &w)| (t.clone(), w / total))
                .collect(),
        }
    }

    /// Writes the normalized weights.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.normalized())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Z-scores each type column over documents (population variance).
/// Constant columns become all zeros.
pub fn standardize(matrix: &ScoreMatrix) -> ScoreMatrix {
    let n = matrix.num_docs();
    let mut rows: Vec<Vec<f64>> = matrix.rows().to_vec();
    for t in 0..matrix.num_types() {
        let column = matrix.column(t);
        let mean = column.iter().sum::<f64>() / n.max(1) as f64;
        let var = column.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        let std = var.sqrt();
        let magnitude = column.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        let constant = n < 2 || std <= 1e-12 * magnitude;
        for (row, s) in rows.iter_mut().zip(&column) {
            row[t] = if constant { 0.0 } else { (s - mean) / std };
        }
    }
    ScoreMatrix::new(
        matrix.source_tag.clone(),
        matrix.doc_ids().to_vec(),
        matrix.type_ids().to_vec(),
        rows,
    )
    .expect("standardized matrix keeps its shape")
}

/// Entry-wise `sum_i w_i * S_i`, tagged "fused".
pub fn fuse(matrices: &[ScoreMatrix], weights: &FusionWeights) -> Result<ScoreMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::MatrixMismatch("nothing to fuse".into()))?;
    let mut coefficients = Vec::with_capacity(matrices.len());
    for (i, m) in matrices.iter().enumerate() {
        if m.doc_ids() != first.doc_ids() {
            return Err(Error::MatrixMismatch(format!(
                "doc ordering of {} differs from {}",
                m.source_tag, first.source_tag
            )));
        }
        if m.type_ids() != first.type_ids() {
            return Err(Error::MatrixMismatch(format!(
                "type ordering of {} differs from {}",
                m.source_tag, first.source_tag
            )));
        }
        if matrices[..i].iter().any(|p| p.source_tag == m.source_tag) {
            return Err(Error::MatrixMismatch(format!("duplicate source {}", m.source_tag)));
        }
        let w = weights
            .get(&m.source_tag)
            .ok_or_else(|| Error::MissingWeight(m.source_tag.clone()))?;
        coefficients.push(w);
    }
    let rows = (0..first.num_docs())
        .map(|d| {
            (0..first.num_types())
                .map(|t| {
                    matrices
                        .iter()
                        .zip(&coefficients)
                        .map(|(m, &w)| w * m.get(d, t))
                        .sum()
                })
                .collect()
        })
        .collect();
    ScoreMatrix::new(
        "fused",
        first.doc_ids().to_vec(),
        first.type_ids().to_vec(),
        rows,
    )
}

/// All weight vectors on the simplex with coordinates in multiples of
/// `1/steps`, ordered so that weight on earlier sources comes first:
/// `(steps, 0, ..)` precedes `(steps - 1, 1, ..)`.
pub fn simplex_grid(sources: usize, steps: usize) -> Vec<Vec<usize>> {
    fn fill(remaining: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in (0..=remaining).rev() {
            prefix.push(take);
            fill(remaining - take, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if sources > 0 {
        fill(steps, sources, &mut Vec::with_capacity(sources), &mut out);
    }
    out
}

/// Grid-searches fusion weights maximizing dev mean type AP.
///
/// Matrices should already be standardized. Sources are ordered by tag;
/// among equally scoring grid points the first in [`simplex_grid`] order
/// wins. Only documents with a dev label are scored.
pub fn tune_weights(matrices: &[ScoreMatrix], dev: &LabelStore, step: f64) -> Result<FusionWeights> {
    if matrices.is_empty() {
        return Err(Error::MatrixMismatch("nothing to tune".into()));
    }
    if dev.is_empty() {
        return Err(Error::InvalidConfig("dev labels are empty".into()));
    }
    let steps = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((steps * step) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("grid step {step} must divide 1")));
    }
    let steps = steps as usize;

    let mut sorted: Vec<ScoreMatrix> = matrices
        .iter()
        .map(|m| m.filter_docs(|d| dev.contains(d)))
        .collect();
    sorted.sort_by(|a, b| a.source_tag.cmp(&b.source_tag));
    let tags: Vec<String> = sorted.iter().map(|m| m.source_tag.clone()).collect();

    let grid = simplex_grid(tags.len(), steps);
    let scored: Vec<f64> = grid
        .par_iter()
        .map(|point| {
            let weights = grid_weights(&tags, point, steps);
            let fused = fuse(&sorted, &weights)?;
            let report = evaluate(&fused, dev, RelevanceRule::MaxScore)?;
            Ok(report.mean_type_ap.unwrap_or(0.0))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, &score) in scored.iter().enumerate() {
        if score > scored[best] {
            best = i;
        }
    }
    Ok(grid_weights(&tags, &grid[best], steps))
}

fn grid_weights(tags: &[String], point: &[usize], steps: usize) -> FusionWeights {
    FusionWeights {
        weights: tags
            .iter()
            .zip(point)
            .map(|(t, &k)| (t.clone(), k as f64 / steps as f64))
            .collect(),
    }
}
