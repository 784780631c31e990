//! Per-stream featurize / train / score glue shared by the CLI and the
//! annotation service.

use std::path::Path;

use crate::corpus::{Corpus, LabelStore, SfTypeInventory};
use crate::error::{Error, Result};
use crate::eval::StreamConfig;
use crate::features::{build_vocab, featurize_corpus, SparseVector, Vocabulary};
use crate::fusion::{fuse, standardize, FusionWeights};
use crate::svm::{score_documents, train_one_vs_rest, LinearModel, ScoreMatrix, TrainConfig};

/// Vocabulary plus features of every corpus document for one stream.
#[derive(Clone, Debug)]
pub struct FeaturizedStream {
    pub config: StreamConfig,
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    pub features: Vec<SparseVector>,
}

impl FeaturizedStream {
    pub fn build(corpus: &Corpus, config: &StreamConfig) -> Result<Self> {
        let vocab = build_vocab(corpus, &config.stream_id, config.n, config.min_df)?;
        let features = featurize_corpus(corpus, &config.stream_id, &vocab);
        Ok(FeaturizedStream {
            config: config.clone(),
            vocab,
            doc_ids: corpus.doc_ids(),
            features,
        })
    }

    /// Featurizes with an existing vocabulary.
    pub fn with_vocab(corpus: &Corpus, config: &StreamConfig, vocab: Vocabulary) -> Self {
        let features = featurize_corpus(corpus, &config.stream_id, &vocab);
        FeaturizedStream {
            config: config.clone(),
            vocab,
            doc_ids: corpus.doc_ids(),
            features,
        }
    }

    pub fn train(
        &self,
        labels: &LabelStore,
        inventory: &SfTypeInventory,
        config: &TrainConfig,
    ) -> Result<StreamModel> {
        let models = train_one_vs_rest(
            &self.features,
            &self.doc_ids,
            labels,
            inventory,
            self.vocab.len(),
            config,
        )?;
        Ok(StreamModel {
            stream: self.config.clone(),
            vocab: self.vocab.clone(),
            models,
        })
    }
}

/// Trained one-vs-rest models for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamModel {
    pub stream: StreamConfig,
    pub vocab: Vocabulary,
    pub models: Vec<LinearModel>,
}

impl StreamModel {
    /// Scores the stream's own featurized documents.
    pub fn score(&self, features: &FeaturizedStream) -> Result<ScoreMatrix> {
        score_documents(
            &self.models,
            &features.features,
            &features.doc_ids,
            &self.stream.stream_id,
        )
    }

    /// Featurizes and scores every corpus document.
    pub fn score_corpus(&self, corpus: &Corpus) -> Result<ScoreMatrix> {
        let features = featurize_corpus(corpus, &self.stream.stream_id, &self.vocab);
        score_documents(
            &self.models,
            &features,
            &corpus.doc_ids(),
            &self.stream.stream_id,
        )
    }

    /// Writes `stream.json`, `vocab.json` and one `model_<type>.json` per
    /// type into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stream = dir.join("stream.json");
        std::fs::write(&stream, serde_json::to_string_pretty(&self.stream)?)
            .map_err(|e| Error::io(&stream, e))?;
        self.vocab.save(dir.join("vocab.json"))?;
        for model in &self.models {
            model.save(dir.join(format!("model_{}.json", model.sf_type)))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, inventory: &SfTypeInventory) -> Result<Self> {
        let dir = dir.as_ref();
        let stream_path = dir.join("stream.json");
        let text = std::fs::read_to_string(&stream_path).map_err(|e| Error::io(&stream_path, e))?;
        let stream: StreamConfig = serde_json::from_str(&text)?;
        let vocab = Vocabulary::load(dir.join("vocab.json"))?;
        let models = inventory
            .types()
            .iter()
            .map(|t| LinearModel::load(dir.join(format!("model_{t}.json"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = models.iter().find(|m| m.dim() != vocab.len()) {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: m.dim(),
            });
        }
        Ok(StreamModel {
            stream,
            vocab,
            models,
        })
    }
}

/// Standardizes each matrix, then fuses. A single matrix is returned as is
/// (retagged "fused").
pub fn fuse_standardized(matrices: &[ScoreMatrix], weights: Option<&FusionWeights>) -> Result<ScoreMatrix> {
    if let [only] = matrices {
        return Ok(only.map("fused", |s| s));
    }
    let standardized: Vec<ScoreMatrix> = matrices.iter().map(standardize).collect();
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = FusionWeights::uniform(matrices.iter().map(|m| m.source_tag.clone()));
            &uniform
        }
    };
    fuse(&standardized, weights)
}
