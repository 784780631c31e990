//! One-vs-rest linear SVMs trained with Pegasos SGD.
//!
//! Each SF type gets its own binary hinge-loss SVM with L2 regularization.
//! The bias is an extra constant-1 feature at column `dim`, regularized like
//! every other weight. Raw margins are used as SF-type scores.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelStore, SfTypeInventory};
use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Project onto the ball of radius `1/sqrt(lambda)` after each step.
    pub project: bool,
    /// Weight hinge steps by inverse class frequency.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
            shuffle: true,
            project: true,
            balance_classes: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense weights of length `dim + 1`; the last entry is the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub sf_type: String,
    pub config: TrainConfig,
    pub weights: Vec<f64>,
    /// True when the training set lacked positives or negatives.
    pub degenerate: bool,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    sf_type: String,
    #[serde(flatten)]
    config: TrainConfig,
    dim: usize,
    weights: Vec<(usize, f64)>,
    degenerate: bool,
    #[serde(default)]
    positives: usize,
    #[serde(default)]
    negatives: usize,
}

impl LinearModel {
    /// Feature dimension, excluding the bias column.
    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.dim()]
    }

    /// Raw margin `<w, x> + b`.
    pub fn score(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights[..self.dim()]) + self.bias()
    }

    /// Norm over all coordinates, bias included.
    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            sf_type: self.sf_type.clone(),
            config: self.config.clone(),
            dim: self.dim(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i, w))
                .collect(),
            degenerate: self.degenerate,
            positives: self.positives,
            negatives: self.negatives,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let mut weights = vec![0.0; file.dim + 1];
        for (i, w) in file.weights {
            if i > file.dim || !w.is_finite() {
                return Err(Error::InvalidConfig(format!("bad weight entry ({i}, {w})")));
            }
            weights[i] = w;
        }
        Ok(LinearModel {
            sf_type: file.sf_type,
            config: file.config,
            weights,
            degenerate: file.degenerate,
            positives: file.positives,
            negatives: file.negatives,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Weight vector `w = scale * v`, so the `(1 - eta*lambda)` shrink is O(1).
struct ScaledWeights {
    v: Vec<f64>,
    scale: f64,
    /// Squared norm of `v`, maintained incrementally.
    sq_norm: f64,
}

impl ScaledWeights {
    fn new(len: usize) -> Self {
        ScaledWeights {
            v: vec![0.0; len],
            scale: 1.0,
            sq_norm: 0.0,
        }
    }

    /// `<v, x~>` where `x~` is `x` with a trailing constant 1.
    fn raw_dot(&self, x: &SparseVector) -> f64 {
        let bias = self.v.len() - 1;
        x.iter().map(|(i, val)| self.v[i] * val).sum::<f64>() + self.v[bias]
    }

    fn shrink(&mut self, factor: f64) {
        if factor == 0.0 {
            self.v.iter_mut().for_each(|w| *w = 0.0);
            self.scale = 1.0;
            self.sq_norm = 0.0;
        } else {
            self.scale *= factor;
        }
    }

    /// `w += step * x~`, given `raw = <v, x~>` and `x_sq = |x~|^2`.
    fn add(&mut self, x: &SparseVector, step: f64, raw: f64, x_sq: f64) {
        let c = step / self.scale;
        let bias = self.v.len() - 1;
        for (i, val) in x.iter() {
            self.v[i] += c * val;
        }
        self.v[bias] += c;
        self.sq_norm = (self.sq_norm + 2.0 * c * raw + c * c * x_sq).max(0.0);
    }

    fn norm(&self) -> f64 {
        self.scale.abs() * self.sq_norm.sqrt()
    }

    fn renormalize(&mut self) {
        let s = self.scale;
        self.v.iter_mut().for_each(|w| *w *= s);
        self.scale = 1.0;
        self.sq_norm = self.v.iter().map(|w| w * w).sum();
    }

    fn into_weights(mut self) -> Vec<f64> {
        self.renormalize();
        self.v
    }
}

/// Trains one binary SVM with Pegasos. `labels` holds +1/-1 targets.
/// Returns `dim + 1` weights, bias last.
pub fn pegasos(
    examples: &[&SparseVector],
    labels: &[f64],
    dim: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if examples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: examples.len(),
            found: labels.len(),
        });
    }
    if let Some(x) = examples.iter().find(|x| x.min_dim() > dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.min_dim(),
        });
    }
    let mut w = ScaledWeights::new(dim + 1);
    if examples.is_empty() {
        return Ok(w.into_weights());
    }

    let m = examples.len() as f64;
    let num_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let class_weight = |y: f64| {
        if !config.balance_classes {
            return 1.0;
        }
        let count = if y > 0.0 { num_pos } else { m - num_pos };
        if count == 0.0 {
            1.0
        } else {
            m / (2.0 * count)
        }
    };
    let x_sq: Vec<f64> = examples.iter().map(|x| x.squared_norm() + 1.0).collect();
    let radius = 1.0 / config.lambda.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step: u64 = 0;
    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            step += 1;
            let eta = 1.0 / (config.lambda * step as f64);
            let y = labels[i];
            let raw = w.raw_dot(examples[i]);
            let margin = y * w.scale * raw;
            w.shrink(1.0 - eta * config.lambda);
            if margin < 1.0 {
                // shrink() may have zeroed v
                let raw = if w.sq_norm == 0.0 { 0.0 } else { raw };
                w.add(examples[i], eta * y * class_weight(y), raw, x_sq[i]);
            }
            if config.project {
                let norm = w.norm();
                if norm > radius {
                    w.scale *= radius / norm;
                }
            }
            if w.scale.abs() < 1e-100 || w.scale.abs() > 1e100 {
                w.renormalize();
            }
        }
        // bound incremental drift in sq_norm
        w.renormalize();
    }
    Ok(w.into_weights())
}

/// `lambda/2 * |w without bias|^2 + mean hinge loss`.
pub fn objective(model: &LinearModel, features: &[&SparseVector], labels: &[f64]) -> f64 {
    let dim = model.dim();
    let reg: f64 = model.weights[..dim].iter().map(|w| w * w).sum();
    let hinge: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - y * model.score(x)).max(0.0))
        .sum();
    let mean_hinge = if features.is_empty() {
        0.0
    } else {
        hinge / features.len() as f64
    };
    0.5 * model.config.lambda * reg + mean_hinge
}

/// Trains one model per inventory type on every labeled document.
///
/// `features[i]` belongs to `doc_ids[i]`. Every document in `labels` must
/// have features; unlabeled documents are ignored. Types lacking positives
/// (or negatives) are still trained but flagged `degenerate`.
pub fn train_one_vs_rest(
    features: &[SparseVector],
    doc_ids: &[String],
    labels: &LabelStore,
    inventory: &SfTypeInventory,
    dim: usize,
    config: &TrainConfig,
) -> Result<Vec<LinearModel>> {
    config.validate()?;
    if features.len() != doc_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: doc_ids.len(),
            found: features.len(),
        });
    }
    let by_id: HashMap<&str, &SparseVector> = doc_ids
        .iter()
        .map(String::as_str)
        .zip(features.iter())
        .collect();
    let mut examples = Vec::with_capacity(labels.len());
    let mut records = Vec::with_capacity(labels.len());
    for record in labels.iter() {
        let x = by_id
            .get(record.doc_id.as_str())
            .ok_or_else(|| Error::MissingFeatures(record.doc_id.clone()))?;
        examples.push(*x);
        records.push(record);
    }

    inventory
        .types()
        .par_iter()
        .map(|sf_type| {
            let ys: Vec<f64> = records
                .iter()
                .map(|r| if r.types.contains(sf_type) { 1.0 } else { -1.0 })
                .collect();
            let positives = ys.iter().filter(|&&y| y > 0.0).count();
            let negatives = ys.len() - positives;
            let weights = pegasos(&examples, &ys, dim, config)?;
            Ok(LinearModel {
                sf_type: sf_type.clone(),
                config: config.clone(),
                weights,
                degenerate: positives == 0 || negatives == 0,
                positives,
                negatives,
            })
        })
        .collect()
}

/// Documents x types matrix of real-valued scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreMatrix")]
pub struct ScoreMatrix {
    pub source_tag: String,
    doc_ids: Vec<String>,
    type_ids: Vec<String>,
    scores: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawScoreMatrix {
    source_tag: String,
    doc_ids: Vec<String>,
    type_ids: Vec<String>,
    scores: Vec<Vec<f64>>,
}

impl TryFrom<RawScoreMatrix> for ScoreMatrix {
    type Error = Error;

    fn try_from(raw: RawScoreMatrix) -> Result<Self> {
        ScoreMatrix::new(raw.source_tag, raw.doc_ids, raw.type_ids, raw.scores)
    }
}

impl ScoreMatrix {
    pub fn new(
        source_tag: impl Into<String>,
        doc_ids: Vec<String>,
        type_ids: Vec<String>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if scores.len() != doc_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: doc_ids.len(),
                found: scores.len(),
            });
        }
        for row in &scores {
            if row.len() != type_ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: type_ids.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidConfig("non-finite score".into()));
            }
        }
        Ok(ScoreMatrix {
            source_tag: source_tag.into(),
            doc_ids,
            type_ids,
            scores,
        })
    }

    /// All-zero matrix.
    pub fn zeros(source_tag: impl Into<String>, doc_ids: Vec<String>, type_ids: Vec<String>) -> Self {
        let scores = vec![vec![0.0; type_ids.len()]; doc_ids.len()];
        ScoreMatrix {
            source_tag: source_tag.into(),
            doc_ids,
            type_ids,
            scores,
        }
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn type_ids(&self) -> &[String] {
        &self.type_ids
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_types(&self) -> usize {
        self.type_ids.len()
    }

    pub fn get(&self, doc: usize, sf_type: usize) -> f64 {
        self.scores[doc][sf_type]
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        &self.scores[doc]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn column(&self, sf_type: usize) -> Vec<f64> {
        self.scores.iter().map(|r| r[sf_type]).collect()
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    /// Applies `f` to every entry.
    pub fn map(&self, source_tag: impl Into<String>, f: impl Fn(f64) -> f64) -> ScoreMatrix {
        ScoreMatrix {
            source_tag: source_tag.into(),
            doc_ids: self.doc_ids.clone(),
            type_ids: self.type_ids.clone(),
            scores: self
                .scores
                .iter()
                .map(|r| r.iter().map(|&s| f(s)).collect())
                .collect(),
        }
    }

    /// Rows whose doc_id satisfies `keep`, order preserved.
    pub fn filter_docs(&self, keep: impl Fn(&str) -> bool) -> ScoreMatrix {
        let (doc_ids, scores) = self
            .doc_ids
            .iter()
            .zip(&self.scores)
            .filter(|(d, _)| keep(d))
            .map(|(d, r)| (d.clone(), r.clone()))
            .unzip();
        ScoreMatrix {
            source_tag: self.source_tag.clone(),
            doc_ids,
            type_ids: self.type_ids.clone(),
            scores,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scores every document under every model: entry `(i, t)` is the raw
/// margin of model `t` on `features[i]`.
pub fn score_documents(
    models: &[LinearModel],
    features: &[SparseVector],
    doc_ids: &[String],
    source_tag: &str,
) -> Result<ScoreMatrix> {
    if features.len() != doc_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: doc_ids.len(),
            found: features.len(),
        });
    }
    let dim = models.first().map_or(0, LinearModel::dim);
    if let Some(m) = models.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: m.dim(),
        });
    }
    if let Some(x) = features.iter().find(|x| x.min_dim() > dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.min_dim(),
        });
    }
    let scores = features
        .par_iter()
        .map(|x| models.iter().map(|m| m.score(x)).collect())
        .collect();
    ScoreMatrix::new(
        source_tag,
        doc_ids.to_vec(),
        models.iter().map(|m| m.sf_type.clone()).collect(),
        scores,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelRecord, LabelSource};

    fn sv(pairs: &[(usize, f64)]) -> SparseVector {
        SparseVector::from_pairs(pairs.to_vec())
    }

    #[test]
    fn first_step_from_zero_is_x_over_lambda() {
        let x = sv(&[(0, 0.6), (2, 0.8)]);
        let config = TrainConfig {
            lambda: 0.5,
            epochs: 1,
            project: false,
            ..Default::default()
        };
        let w = pegasos(&[&x], &[1.0], 3, &config).unwrap();
        assert_eq!(w, vec![1.2, 0.0, 1.6, 2.0]);
    }

    #[test]
    fn separates_two_points() {
        let pos = sv(&[(0, 1.0)]);
        let neg = sv(&[(1, 1.0)]);
        let config = TrainConfig {
            lambda: 0.1,
            epochs: 200,
            seed: 3,
            ..Default::default()
        };
        let w = pegasos(&[&pos, &neg], &[1.0, -1.0], 2, &config).unwrap();
        let model = LinearModel {
            sf_type: "t".into(),
            config,
            weights: w,
            degenerate: false,
            positives: 1,
            negatives: 1,
        };
        assert!(model.score(&pos) > 0.0);
        assert!(model.score(&neg) < 0.0);
    }

    #[test]
    fn huge_lambda_crushes_weights() {
        let xs: Vec<SparseVector> = (0..20)
            .map(|i| sv(&[(i % 5, 1.0), ((i + 1) % 5, 0.5)]).normalized())
            .collect();
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let ys: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let config = TrainConfig {
            lambda: 1e6,
            epochs: 5,
            ..Default::default()
        };
        let w = pegasos(&refs, &ys, 5, &config).unwrap();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3 + 1e-9, "norm {norm}");
    }

    #[test]
    fn objective_at_zero_is_one() {
        let xs = [sv(&[(0, 1.0)]), sv(&[(1, 1.0)])];
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let model = LinearModel {
            sf_type: "t".into(),
            config: TrainConfig::default(),
            weights: vec![0.0; 3],
            degenerate: false,
            positives: 1,
            negatives: 1,
        };
        assert_eq!(objective(&model, &refs, &[1.0, -1.0]), 1.0);
    }

    #[test]
    fn objective_with_zero_hinge_is_regularizer() {
        let xs = [sv(&[(0, 1.0)]), sv(&[(1, 1.0)])];
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let model = LinearModel {
            sf_type: "t".into(),
            config: TrainConfig {
                lambda: 0.1,
                ..Default::default()
            },
            weights: vec![2.0, -2.0, 0.0],
            degenerate: false,
            positives: 1,
            negatives: 1,
        };
        assert!((objective(&model, &refs, &[1.0, -1.0]) - 0.05 * 8.0).abs() < 1e-15);
    }

    #[test]
    fn zero_doc_scores_bias() {
        let model = LinearModel {
            sf_type: "t".into(),
            config: TrainConfig::default(),
            weights: vec![1.0, 0.0, -0.25],
            degenerate: false,
            positives: 0,
            negatives: 0,
        };
        let m = score_documents(
            std::slice::from_ref(&model),
            &[SparseVector::empty(), sv(&[(0, 0.5)])],
            &["a".into(), "b".into()],
            "asr",
        )
        .unwrap();
        assert_eq!(m.get(0, 0), -0.25);
        assert_eq!(m.get(1, 0), 0.25);
    }

    #[test]
    fn score_dimension_mismatch() {
        let model = LinearModel {
            sf_type: "t".into(),
            config: TrainConfig::default(),
            weights: vec![0.0; 3],
            degenerate: false,
            positives: 0,
            negatives: 0,
        };
        let err = score_documents(&[model], &[sv(&[(7, 1.0)])], &["a".into()], "x");
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_type_flagged_and_counts_match() {
        let inv = SfTypeInventory::new(vec!["A".into(), "B".into()]).unwrap();
        let ids: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        let feats: Vec<SparseVector> = (0..4).map(|i| sv(&[(i, 1.0)])).collect();
        let labels: LabelStore = [
            LabelRecord::new("d0", ["A"], LabelSource::Human),
            LabelRecord::new("d1", ["A"], LabelSource::Human),
            LabelRecord::new("d2", Vec::<String>::new(), LabelSource::Human),
        ]
        .into_iter()
        .collect();
        let models =
            train_one_vs_rest(&feats, &ids, &labels, &inv, 4, &TrainConfig::default()).unwrap();
        assert_eq!(models[0].positives, 2);
        assert!(!models[0].degenerate);
        assert_eq!(models[1].positives, 0);
        assert!(models[1].degenerate);
    }

    #[test]
    fn labeled_doc_without_features_is_error() {
        let inv = SfTypeInventory::new(vec!["A".into()]).unwrap();
        let labels: LabelStore = [LabelRecord::new("zz", ["A"], LabelSource::Human)]
            .into_iter()
            .collect();
        let err = train_one_vs_rest(&[], &[], &labels, &inv, 1, &TrainConfig::default());
        assert!(matches!(err, Err(Error::MissingFeatures(id)) if id == "zz"));
    }

    #[test]
    fn model_json_round_trip() {
        let model = LinearModel {
            sf_type: "med".into(),
            config: TrainConfig::default(),
            weights: vec![0.5, 0.0, -1.0 / 3.0, 0.1],
            degenerate: true,
            positives: 0,
            negatives: 9,
        };
        let back = LinearModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
