use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate doc_id {0}")]
    DuplicateDoc(String),
    #[error("line {line}: unknown SF type {sf_type}")]
    UnknownType { sf_type: String, line: usize },
    #[error("line {line}: probability {prob} outside [0, 1]")]
    InvalidProbability { prob: f64, line: usize },
    #[error("invalid inventory: {0}")]
    InvalidInventory(String),
    #[error("cannot split {population} units into {k} folds")]
    FoldCount { k: usize, population: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("missing features for labeled doc {0}")]
    MissingFeatures(String),
    #[error("missing truth for doc {0}")]
    MissingTruth(String),
    #[error("score matrices disagree: {0}")]
    MatrixMismatch(String),
    #[error("no fusion weight for source {0}")]
    MissingWeight(String),
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("label grid point {requested} exceeds {available} available training labels")]
    GridPoint { requested: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl ToString) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }
}
