//! Average-precision evaluation on the Type and Relevance layers, plus the
//! label-count learning curve.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_folds, Corpus, FoldMode, LabelStore, SfTypeInventory};
use crate::error::{Error, Result};
use crate::features::{build_vocab, featurize_corpus, SparseVector};
use crate::fusion::{fuse, standardize, FusionWeights};
use crate::svm::{score_documents, train_one_vs_rest, ScoreMatrix, TrainConfig};

/// Mean of precision@k over the ranks `k` of relevant items, after sorting
/// by descending score. Ties keep input order. `None` when nothing is
/// relevant.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), relevant.len(), "scores and relevance differ in length");
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // `+ 0.0` folds -0.0 into 0.0 so equal scores tie
    order.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// How a document's relevance score is derived from its type scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceRule {
    #[default]
    MaxScore,
}

impl RelevanceRule {
    pub fn apply(self, type_scores: &[f64]) -> f64 {
        match self {
            RelevanceRule::MaxScore => type_scores
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP per type in matrix order; `null` for types without positives.
    pub per_type_ap: IndexMap<String, Option<f64>>,
    /// Mean over types with at least one positive.
    pub mean_type_ap: Option<f64>,
    pub relevance_ap: Option<f64>,
    pub num_docs: usize,
    pub num_relevant: usize,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every type column and the relevance layer against `truth`.
pub fn evaluate(scores: &ScoreMatrix, truth: &LabelStore, rule: RelevanceRule) -> Result<EvalReport> {
    // Ties in AP are broken by ascending doc_id.
    let mut order: Vec<usize> = (0..scores.num_docs()).collect();
    order.sort_by(|&a, &b| scores.doc_ids()[a].cmp(&scores.doc_ids()[b]));
    let mut records = Vec::with_capacity(order.len());
    for &i in &order {
        let id = &scores.doc_ids()[i];
        records.push(truth.get(id).ok_or_else(|| Error::MissingTruth(id.clone()))?);
    }

    let mut per_type_ap = IndexMap::new();
    for (t, sf_type) in scores.type_ids().iter().enumerate() {
        let column: Vec<f64> = order.iter().map(|&i| scores.get(i, t)).collect();
        let relevant: Vec<bool> = records.iter().map(|r| r.types.contains(sf_type)).collect();
        per_type_ap.insert(sf_type.clone(), average_precision(&column, &relevant));
    }
    let mean_type_ap = mean(per_type_ap.values().flatten().copied());

    let relevance_scores: Vec<f64> = order.iter().map(|&i| rule.apply(scores.row(i))).collect();
    let relevant: Vec<bool> = records.iter().map(|r| r.is_relevant()).collect();
    let num_relevant = relevant.iter().filter(|&&r| r).count();
    let relevance_ap = average_precision(&relevance_scores, &relevant);

    Ok(EvalReport {
        per_type_ap,
        mean_type_ap,
        relevance_ap,
        num_docs: scores.num_docs(),
        num_relevant,
    })
}

/// Featurization settings for one tokenization stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub stream_id: String,
    #[serde(default = "default_order")]
    pub n: usize,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
}

fn default_order() -> usize {
    1
}

fn default_min_df() -> usize {
    1
}

impl StreamConfig {
    pub fn unigram(stream_id: impl Into<String>) -> Self {
        StreamConfig {
            stream_id: stream_id.into(),
            n: 1,
            min_df: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    pub folds: usize,
    pub label_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub fold_mode: FoldMode,
    /// Per-stream fusion weights; uniform when absent.
    #[serde(default)]
    pub fusion: Option<FusionWeights>,
}

impl Default for CurveSettings {
    fn default() -> Self {
        CurveSettings {
            folds: 10,
            label_grid: Vec::new(),
            seeds: vec![0],
            fold_mode: FoldMode::Document,
            fusion: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub num_labels: usize,
    pub mean_type_ap: f64,
    pub relevance_ap: f64,
    /// Standard error of `mean_type_ap` over the fold x seed evaluations.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub folds: usize,
    pub seeds: Vec<u64>,
}

impl LearningCurve {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "num_labels,mean_type_ap,relevance_ap,stderr")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{}",
                p.num_labels, p.mean_type_ap, p.relevance_ap, p.stderr
            )?;
        }
        Ok(())
    }

    pub fn save(&self, json: impl AsRef<Path>, csv: Option<&Path>) -> Result<()> {
        let json = json.as_ref();
        std::fs::write(json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(json, e))?;
        if let Some(csv) = csv {
            let file = std::fs::File::create(csv).map_err(|e| Error::io(csv, e))?;
            self.write_csv(file).map_err(|e| Error::io(csv, e))?;
        }
        Ok(())
    }
}

struct StreamFeatures {
    tag: String,
    dim: usize,
    features: Vec<SparseVector>,
}

/// Cross-validated AP as a function of the number of training labels.
///
/// Only documents with a truth record take part. For every seed the corpus
/// is split into `folds`; each fold is held out in turn, and the classifiers
/// are trained on the first `n` documents of a seeded shuffle of the other
/// folds (so smaller grid points are subsets of larger ones). Vocabularies
/// are fit once per stream on the whole corpus, which needs no labels.
pub fn learning_curve(
    corpus: &Corpus,
    truth: &LabelStore,
    inventory: &SfTypeInventory,
    streams: &[StreamConfig],
    train: &TrainConfig,
    settings: &CurveSettings,
) -> Result<LearningCurve> {
    if settings.folds < 2 {
        return Err(Error::InvalidConfig("learning curve needs at least 2 folds".into()));
    }
    if streams.is_empty() {
        return Err(Error::InvalidConfig("no streams configured".into()));
    }
    if settings.seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    let mut grid = settings.label_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(Error::InvalidConfig("label grid must hold positive counts".into()));
    }
    let labeled = corpus.subset(|d| truth.contains(&d.doc_id));
    if labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let doc_ids = corpus.doc_ids();
    let stream_features: Vec<StreamFeatures> = streams
        .iter()
        .map(|s| {
            let vocab = build_vocab(corpus, &s.stream_id, s.n, s.min_df)?;
            Ok(StreamFeatures {
                tag: s.stream_id.clone(),
                dim: vocab.len(),
                features: featurize_corpus(corpus, &s.stream_id, &vocab),
            })
        })
        .collect::<Result<_>>()?;
    let position: HashMap<&str, usize> = doc_ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let weights = match &settings.fusion {
        Some(w) => w.clone(),
        None => FusionWeights::uniform(stream_features.iter().map(|s| s.tag.clone())),
    };

    let mut tasks = Vec::new();
    for &seed in &settings.seeds {
        let folds = split_folds(&labeled, settings.folds, seed, settings.fold_mode)?;
        for fold in 0..settings.folds {
            let held_out: Vec<String> = folds.members(fold).into_iter().map(String::from).collect();
            let mut pool: Vec<String> = folds
                .assignment
                .iter()
                .filter(|(_, &f)| f != fold)
                .map(|(id, _)| id.clone())
                .collect();
            let available = pool.len();
            if let Some(&too_many) = grid.iter().find(|&&n| n > available) {
                return Err(Error::GridPoint {
                    requested: too_many,
                    available,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((fold as u64 + 1) << 32));
            pool.shuffle(&mut rng);
            tasks.push((seed, held_out, pool));
        }
    }

    let eval_task = |(seed, held_out, pool): &(u64, Vec<String>, Vec<String>),
                     n: usize|
     -> Result<(f64, f64)> {
        let train_labels = truth.restrict(pool[..n].iter().map(String::as_str));
        let config = TrainConfig {
            seed: *seed,
            ..train.clone()
        };
        let test_ids = held_out.clone();
        let mut matrices = Vec::with_capacity(stream_features.len());
        for s in &stream_features {
            let train_ids: Vec<String> = train_labels.doc_ids().map(String::from).collect();
            let train_x: Vec<SparseVector> = train_ids
                .iter()
                .map(|d| s.features[position[d.as_str()]].clone())
                .collect();
            let models =
                train_one_vs_rest(&train_x, &train_ids, &train_labels, inventory, s.dim, &config)?;
            let test_x: Vec<SparseVector> = test_ids
                .iter()
                .map(|d| s.features[position[d.as_str()]].clone())
                .collect();
            matrices.push(score_documents(&models, &test_x, &test_ids, &s.tag)?);
        }
        let scores = if matrices.len() == 1 {
            matrices.pop().unwrap()
        } else {
            let standardized: Vec<ScoreMatrix> = matrices.iter().map(standardize).collect();
            fuse(&standardized, &weights)?
        };
        let report = evaluate(&scores, truth, RelevanceRule::MaxScore)?;
        Ok((
            report.mean_type_ap.unwrap_or(0.0),
            report.relevance_ap.unwrap_or(0.0),
        ))
    };

    let mut points = Vec::with_capacity(grid.len());
    for &n in &grid {
        let results: Vec<(f64, f64)> = tasks
            .par_iter()
            .map(|task| eval_task(task, n))
            .collect::<Result<_>>()?;
        let count = results.len() as f64;
        let type_mean = results.iter().map(|r| r.0).sum::<f64>() / count;
        let rel_mean = results.iter().map(|r| r.1).sum::<f64>() / count;
        let stderr = if results.len() > 1 {
            let var = results
                .iter()
                .map(|r| (r.0 - type_mean).powi(2))
                .sum::<f64>()
                / (count - 1.0);
            (var / count).sqrt()
        } else {
            0.0
        };
        points.push(CurvePoint {
            num_labels: n,
            mean_type_ap: type_mean,
            relevance_ap: rel_mean,
            stderr,
        });
    }
    Ok(LearningCurve {
        points,
        folds: settings.folds,
        seeds: settings.seeds.clone(),
    })
}

/// Positives per type among `labels`, in inventory order.
pub fn positive_counts(labels: &LabelStore, inventory: &SfTypeInventory) -> BTreeMap<String, usize> {
    inventory
        .types()
        .iter()
        .map(|t| (t.clone(), labels.positives(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelRecord, LabelSource};

    #[test]
    fn perfect_ranking_is_one() {
        let ap = average_precision(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]);
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn relevant_at_ranks_one_and_three() {
        let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert!((ap - 0.833_333_333_333).abs() < 1e-9);
    }

    #[test]
    fn no_positives_is_none() {
        assert_eq!(average_precision(&[1.0, 2.0], &[false, false]), None);
    }

    #[test]
    fn ties_keep_input_order() {
        // both tied; relevant item listed second -> rank 2
        assert_eq!(average_precision(&[1.0, 1.0], &[false, true]), Some(0.5));
        assert_eq!(average_precision(&[-0.0, 0.0], &[false, true]), Some(0.5));
    }

    fn matrix(ids: &[&str], types: &[&str], rows: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix::new(
            "t",
            ids.iter().map(|s| s.to_string()).collect(),
            types.iter().map(|s| s.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn every_doc_every_type_gives_one() {
        let m = matrix(&["a", "b", "c"], &["X", "Y"], vec![vec![0.3, -1.0], vec![2.0, 0.0], vec![-5.0, 1.0]]);
        let truth: LabelStore = ["a", "b", "c"]
            .iter()
            .map(|d| LabelRecord::new(*d, ["X", "Y"], LabelSource::Oracle))
            .collect();
        let report = evaluate(&m, &truth, RelevanceRule::MaxScore).unwrap();
        assert!(report.per_type_ap.values().all(|&ap| ap == Some(1.0)));
        assert_eq!(report.relevance_ap, Some(1.0));
        assert_eq!(report.num_relevant, 3);
    }

    #[test]
    fn indicator_scores_are_perfect() {
        let m = matrix(&["a", "b", "c", "d"], &["X"], vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0]]);
        let truth: LabelStore = [
            LabelRecord::new("a", ["X"], LabelSource::Oracle),
            LabelRecord::new("b", Vec::<String>::new(), LabelSource::Oracle),
            LabelRecord::new("c", ["X"], LabelSource::Oracle),
            LabelRecord::new("d", Vec::<String>::new(), LabelSource::Oracle),
        ]
        .into_iter()
        .collect();
        let report = evaluate(&m, &truth, RelevanceRule::MaxScore).unwrap();
        assert_eq!(report.per_type_ap["X"], Some(1.0));
        assert_eq!(report.mean_type_ap, Some(1.0));
    }

    #[test]
    fn types_without_positives_excluded_from_mean() {
        let m = matrix(&["a", "b"], &["X", "Y"], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let truth: LabelStore = [
            LabelRecord::new("a", ["X"], LabelSource::Oracle),
            LabelRecord::new("b", Vec::<String>::new(), LabelSource::Oracle),
        ]
        .into_iter()
        .collect();
        let report = evaluate(&m, &truth, RelevanceRule::MaxScore).unwrap();
        assert_eq!(report.per_type_ap["Y"], None);
        assert_eq!(report.mean_type_ap, Some(1.0));
    }

    #[test]
    fn missing_truth_names_doc() {
        let m = matrix(&["a", "zz"], &["X"], vec![vec![1.0], vec![0.0]]);
        let truth: LabelStore = [LabelRecord::new("a", ["X"], LabelSource::Oracle)]
            .into_iter()
            .collect();
        let err = evaluate(&m, &truth, RelevanceRule::MaxScore).unwrap_err();
        assert!(matches!(err, Error::MissingTruth(id) if id == "zz"));
    }

    #[test]
    fn curve_csv_header() {
        let curve = LearningCurve {
            points: vec![CurvePoint {
                num_labels: 5,
                mean_type_ap: 0.5,
                relevance_ap: 0.25,
                stderr: 0.0,
            }],
            folds: 2,
            seeds: vec![1],
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "num_labels,mean_type_ap,relevance_ap,stderr\n5,0.5,0.25,0\n"
        );
    }
}
