//! State of one labeling session: corpus, label log, current models and
//! scores.
//!
//! Label writes go through a single mutex-guarded writer. Retrains are
//! serialized by their own lock, train on a copy of the label store, and
//! publish a new [`Snapshot`] with one pointer swap, so readers never see
//! scores from two different models.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sftype::eval::positive_counts;
use sftype::{
    fuse_standardized, rank_for_annotation, Corpus, FeaturizedStream, FusionWeights, LabelRecord,
    LabelSource, LabelStore, ScoreMatrix, SelectionBatch, SelectionStrategy, SfTypeInventory,
    StreamConfig, StreamModel, TrainConfig,
};

use crate::error::ServiceError;
use crate::log::LabelLog;

fn default_streams() -> Vec<StreamConfig> {
    vec![StreamConfig::unigram("eng")]
}

fn default_batch_size() -> usize {
    10
}

/// Session settings, read from the `--config` JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "default_streams")]
    pub streams: Vec<StreamConfig>,
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Per-stream fusion weights; uniform when absent.
    #[serde(default)]
    pub fusion_weights: Option<FusionWeights>,
    #[serde(default)]
    pub strategy: SelectionStrategy,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// SF type inventory file; the built-in inventory when absent.
    #[serde(default)]
    pub inventory: Option<PathBuf>,
    /// Where retrained models are written, one subdirectory per stream.
    #[serde(default)]
    pub model_dir: Option<PathBuf>,
    /// Static UI assets served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            streams: default_streams(),
            train: TrainConfig::default(),
            fusion_weights: None,
            strategy: SelectionStrategy::default(),
            batch_size: default_batch_size(),
            inventory: None,
            model_dir: None,
            static_dir: None,
        }
    }
}

impl SessionConfig {
    /// Loads a config; relative paths inside it are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ServiceError::Io(path.to_path_buf(), e))?;
        let mut config: SessionConfig =
            serde_json::from_str(&text).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.inventory, &mut config.model_dir, &mut config.static_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.train.validate()?;
        if self.streams.is_empty() {
            return Err(ServiceError::BadRequest("config lists no streams".into()));
        }
        let ids: HashSet<&str> = self.streams.iter().map(|s| s.stream_id.as_str()).collect();
        if ids.len() != self.streams.len() {
            return Err(ServiceError::BadRequest("duplicate stream_id in config".into()));
        }
        if self.batch_size == 0 {
            return Err(ServiceError::BadRequest("batch_size must be positive".into()));
        }
        if let Some(w) = &self.fusion_weights {
            if let Some(s) = self.streams.iter().find(|s| w.get(&s.stream_id).is_none()) {
                return Err(ServiceError::BadRequest(format!(
                    "fusion_weights has no entry for stream {}",
                    s.stream_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypeSummary {
    pub positives: usize,
    /// Some stream's classifier saw no positives or no negatives.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub model_version: u64,
    pub labels: usize,
    pub types: BTreeMap<String, TypeSummary>,
}

/// Models and scores published by one completed retrain.
#[derive(Debug)]
pub struct Snapshot {
    /// 0 until the first training.
    pub version: u64,
    pub models: Vec<StreamModel>,
    pub scores: ScoreMatrix,
    pub summary: Option<TrainingSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Status {
    pub docs: usize,
    /// Distinct labeled documents after last-wins replay.
    pub labels: usize,
    pub log_lines: usize,
    pub relevant: usize,
    pub unlabeled: usize,
    pub per_type: BTreeMap<String, usize>,
    pub types: Vec<String>,
    pub streams: Vec<String>,
    pub strategy: SelectionStrategy,
    pub model_version: u64,
    pub batch_in_flight: Vec<String>,
    pub oracle: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Suggestion {
    pub sf_type: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchItem {
    pub doc_id: String,
    pub tokens: BTreeMap<String, Vec<String>>,
    /// Every type, highest current score first.
    pub suggestions: Vec<Suggestion>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Progress {
    pub labels: usize,
    pub docs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchResponse {
    #[serde(flatten)]
    pub batch: SelectionBatch,
    pub items: Vec<BatchItem>,
    pub model_version: u64,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DocumentView {
    pub doc_id: String,
    pub story_id: Option<String>,
    pub streams: BTreeMap<String, Vec<String>>,
    pub scores: BTreeMap<String, f64>,
    pub label: Option<LabelRecord>,
    pub model_version: u64,
}

/// A label as submitted by the annotator; any `source` field is ignored.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Submission {
    pub doc_id: String,
    #[serde(default)]
    pub types: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ack {
    pub accepted: usize,
    pub labels: usize,
}

struct Labels {
    log: LabelLog,
    store: LabelStore,
}

pub struct Session {
    corpus: Corpus,
    inventory: SfTypeInventory,
    config: SessionConfig,
    streams: Vec<FeaturizedStream>,
    labels: Mutex<Labels>,
    snapshot: RwLock<Arc<Snapshot>>,
    in_flight: Mutex<Vec<String>>,
    retrain_lock: Mutex<()>,
    oracle: Option<LabelStore>,
}

impl Session {
    /// Replays the label log at `log_path` and trains once if the replayed
    /// labels contain a positive.
    pub fn open(
        corpus: Corpus,
        inventory: SfTypeInventory,
        config: SessionConfig,
        log_path: impl AsRef<Path>,
        oracle: Option<LabelStore>,
    ) -> Result<Session, ServiceError> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(sftype::Error::EmptyCorpus.into());
        }
        let streams = config
            .streams
            .iter()
            .map(|s| FeaturizedStream::build(&corpus, s))
            .collect::<Result<Vec<_>, _>>()?;
        let (log, store) = LabelLog::open(log_path, &inventory)?;
        tracing::info!(
            path = %log.path().display(),
            labels = store.len(),
            lines = log.lines(),
            "replayed label log"
        );
        let empty = Snapshot {
            version: 0,
            models: Vec::new(),
            scores: ScoreMatrix::zeros("fused", corpus.doc_ids(), inventory.types().to_vec()),
            summary: None,
        };
        let session = Session {
            corpus,
            inventory,
            config,
            streams,
            labels: Mutex::new(Labels { log, store }),
            snapshot: RwLock::new(Arc::new(empty)),
            in_flight: Mutex::new(Vec::new()),
            retrain_lock: Mutex::new(()),
            oracle,
        };
        match session.retrain() {
            Ok(_) | Err(ServiceError::Conflict(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn inventory(&self) -> &SfTypeInventory {
        &self.inventory
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap().clone()
    }

    /// Copy of the replayed label store.
    pub fn labels(&self) -> LabelStore {
        self.labels.lock().unwrap().store.clone()
    }

    pub fn status(&self) -> Status {
        let (store_len, relevant, per_type, log_lines) = {
            let labels = self.labels.lock().unwrap();
            (
                labels.store.len(),
                labels.store.iter().filter(|r| r.is_relevant()).count(),
                positive_counts(&labels.store, &self.inventory),
                labels.log.lines(),
            )
        };
        let labeled_in_corpus = self.labeled_set().len();
        Status {
            docs: self.corpus.len(),
            labels: store_len,
            log_lines,
            relevant,
            unlabeled: self.corpus.len() - labeled_in_corpus,
            per_type,
            types: self.inventory.types().to_vec(),
            streams: self.config.streams.iter().map(|s| s.stream_id.clone()).collect(),
            strategy: self.config.strategy,
            model_version: self.snapshot().version,
            batch_in_flight: self.in_flight.lock().unwrap().clone(),
            oracle: self.oracle.is_some(),
        }
    }

    fn labeled_set(&self) -> HashSet<String> {
        let labels = self.labels.lock().unwrap();
        labels
            .store
            .doc_ids()
            .filter(|d| self.corpus.contains(d))
            .map(str::to_string)
            .collect()
    }

    /// Ranks the unlabeled pool with the current scores and records the
    /// result as the batch in flight.
    pub fn next_batch(&self, size: Option<usize>) -> Result<BatchResponse, ServiceError> {
        let size = size.unwrap_or(self.config.batch_size);
        if size == 0 {
            return Err(ServiceError::BadRequest("size must be positive".into()));
        }
        let snapshot = self.snapshot();
        let labeled = self.labeled_set();
        // random batches vary as labeling progresses but replay identically
        let seed = self.config.train.seed ^ (labeled.len() as u64).rotate_left(32);
        let batch = rank_for_annotation(&snapshot.scores, &labeled, size, self.config.strategy, seed);
        let items = batch
            .doc_ids
            .iter()
            .map(|id| self.batch_item(id, &snapshot.scores))
            .collect();
        *self.in_flight.lock().unwrap() = batch.doc_ids.clone();
        Ok(BatchResponse {
            batch,
            items,
            model_version: snapshot.version,
            progress: Progress {
                labels: labeled.len(),
                docs: self.corpus.len(),
            },
        })
    }

    fn batch_item(&self, doc_id: &str, scores: &ScoreMatrix) -> BatchItem {
        let doc = self.corpus.get(doc_id).expect("scored doc is in corpus");
        let row = scores.doc_index(doc_id).map(|i| scores.row(i)).unwrap_or(&[]);
        let mut suggestions: Vec<Suggestion> = scores
            .type_ids()
            .iter()
            .zip(row)
            .map(|(t, &s)| Suggestion {
                sf_type: t.clone(),
                score: s,
            })
            .collect();
        suggestions.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.sf_type.cmp(&b.sf_type)));
        BatchItem {
            doc_id: doc_id.to_string(),
            tokens: doc.streams.clone(),
            suggestions,
        }
    }

    fn validate(&self, records: &[LabelRecord]) -> Result<(), ServiceError> {
        if records.is_empty() {
            return Err(ServiceError::BadRequest("no records".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if !self.corpus.contains(&r.doc_id) {
                return Err(ServiceError::BadRequest(format!(
                    "record {i}: unknown doc_id {}",
                    r.doc_id
                )));
            }
            if let Some(t) = r.unknown_type(&self.inventory) {
                return Err(ServiceError::BadRequest(format!(
                    "record {i}: unknown SF type {t} for doc {}",
                    r.doc_id
                )));
            }
        }
        Ok(())
    }

    /// Validates every record, then appends them all durably. Nothing is
    /// written if any record is invalid.
    pub fn submit(&self, submissions: Vec<Submission>) -> Result<Ack, ServiceError> {
        let records: Vec<LabelRecord> = submissions
            .into_iter()
            .map(|s| LabelRecord {
                doc_id: s.doc_id,
                types: s.types,
                source: LabelSource::Human,
            })
            .collect();
        self.record(records)
    }

    fn record(&self, records: Vec<LabelRecord>) -> Result<Ack, ServiceError> {
        self.validate(&records)?;
        let labels_now = {
            let mut labels = self.labels.lock().unwrap();
            labels.log.append(&records)?;
            for r in &records {
                labels.store.insert(r.clone());
            }
            labels.store.len()
        };
        let done: HashSet<&str> = records.iter().map(|r| r.doc_id.as_str()).collect();
        self.in_flight
            .lock()
            .unwrap()
            .retain(|d| !done.contains(d.as_str()));
        Ok(Ack {
            accepted: records.len(),
            labels: labels_now,
        })
    }

    /// Answers `doc_ids` (the batch in flight when empty) from the oracle
    /// truth. Documents the oracle has no record for are judged not
    /// relevant.
    pub fn oracle_answer(&self, doc_ids: Option<Vec<String>>) -> Result<Ack, ServiceError> {
        let oracle = self
            .oracle
            .as_ref()
            .ok_or_else(|| ServiceError::Conflict("oracle mode is off".into()))?;
        let ids = match doc_ids {
            Some(ids) => ids,
            None => self.in_flight.lock().unwrap().clone(),
        };
        if ids.is_empty() {
            return Ok(Ack {
                accepted: 0,
                labels: self.labels.lock().unwrap().store.len(),
            });
        }
        let records = ids
            .into_iter()
            .map(|id| {
                let types = oracle.get(&id).map(|r| r.types.clone()).unwrap_or_default();
                LabelRecord {
                    doc_id: id,
                    types,
                    source: LabelSource::Oracle,
                }
            })
            .collect();
        self.record(records)
    }

    /// Trains every stream on all replayed labels, fuses, writes model
    /// files if a model directory is configured, and publishes the result.
    pub fn retrain(&self) -> Result<TrainingSummary, ServiceError> {
        let _exclusive = self.retrain_lock.lock().unwrap();
        let store = {
            let labels = self.labels.lock().unwrap();
            labels.store.restrict(
                labels
                    .store
                    .doc_ids()
                    .filter(|d| self.corpus.contains(d))
                    .collect::<Vec<_>>(),
            )
        };
        if !store.iter().any(LabelRecord::is_relevant) {
            return Err(ServiceError::Conflict("no training data".into()));
        }
        let models = self
            .streams
            .iter()
            .map(|s| s.train(&store, &self.inventory, &self.config.train))
            .collect::<Result<Vec<_>, _>>()?;
        let matrices = models
            .iter()
            .zip(&self.streams)
            .map(|(m, s)| m.score(s))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = fuse_standardized(&matrices, self.config.fusion_weights.as_ref())?;

        if let Some(dir) = &self.config.model_dir {
            for m in &models {
                m.save(dir.join(&m.stream.stream_id))?;
            }
        }

        let version = self.snapshot().version + 1;
        let types = self
            .inventory
            .types()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let degenerate = models.iter().any(|m| m.models[i].degenerate);
                (
                    t.clone(),
                    TypeSummary {
                        positives: store.positives(t),
                        degenerate,
                    },
                )
            })
            .collect();
        let summary = TrainingSummary {
            model_version: version,
            labels: store.len(),
            types,
        };
        *self.snapshot.write().unwrap() = Arc::new(Snapshot {
            version,
            models,
            scores,
            summary: Some(summary.clone()),
        });
        tracing::info!(version, labels = summary.labels, "retrained");
        Ok(summary)
    }

    pub fn document(&self, doc_id: &str) -> Result<DocumentView, ServiceError> {
        let doc = self
            .corpus
            .get(doc_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown doc_id {doc_id}")))?;
        let snapshot = self.snapshot();
        let scores = snapshot
            .scores
            .doc_index(doc_id)
            .map(|i| {
                snapshot
                    .scores
                    .type_ids()
                    .iter()
                    .cloned()
                    .zip(snapshot.scores.row(i).iter().copied())
                    .collect()
            })
            .unwrap_or_default();
        let label = self.labels.lock().unwrap().store.get(doc_id).cloned();
        Ok(DocumentView {
            doc_id: doc.doc_id.clone(),
            story_id: doc.story_id.clone(),
            streams: doc.streams.clone(),
            scores,
            label,
            model_version: snapshot.version,
        })
    }
}
