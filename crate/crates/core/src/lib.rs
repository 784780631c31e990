//! Situation-frame type classification for tokenized speech documents.
//!
//! The pipeline turns each tokenization stream of a document (ASR words,
//! discovered acoustic units, translated English words, ...) into
//! IDF-weighted bag-of-n-gram vectors, scores them with one-vs-rest linear
//! SVMs, fuses the per-stream scores, and evaluates with average precision.
//! [`select`] ranks unlabeled documents for a human annotator.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod pipeline;
pub mod select;
pub mod svm;
pub mod synth;
pub mod translate;

pub use corpus::{
    load_documents, load_labels, split_folds, Corpus, Document, FoldAssignment, FoldMode,
    LabelRecord, LabelSource, LabelStore, SfTypeInventory,
};
pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, learning_curve, EvalReport, LearningCurve, RelevanceRule, StreamConfig};
pub use features::{build_vocab, SparseVector, Vocabulary};
pub use fusion::{fuse, standardize, tune_weights, FusionWeights};
pub use pipeline::{fuse_standardized, FeaturizedStream, StreamModel};
pub use select::{rank_for_annotation, SelectionBatch, SelectionStrategy};
pub use svm::{objective, score_documents, train_one_vs_rest, LinearModel, ScoreMatrix, TrainConfig};
pub use translate::{load_table, translate_tokens, OovPolicy, TranslationTable};
