use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-logits: softmax needs at least one element")]
    EmptyLogits,

    #[error("zero-vector: {0} has zero norm")]
    ZeroVector(&'static str),

    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid tensor shape {shape:?} for {len} values")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("no-neighbors: attention needs a non-empty neighbor batch")]
    NoNeighbors,

    #[error("gradient output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("relation '{0}' appears in more than one split")]
    SplitOverlap(String),

    #[error("relation '{0}' is a few-shot relation but also occurs in the background graph")]
    TaskRelationInBackground(String),

    #[error("true tail '{tail}' missing from candidates of query ({head}, {relation})")]
    MissingTrueTail {
        head: String,
        relation: String,
        tail: String,
    },

    #[error("saturated-relation: no corrupted tail exists for head {head} and relation {relation}")]
    SaturatedRelation { head: usize, relation: usize },

    #[error("task '{relation}' has {available} triples but {required} are required")]
    TooFewTriples {
        relation: String,
        available: usize,
        required: usize,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported option: {0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary mismatch between checkpoint and dataset: {0}")]
    VocabMismatch(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::DimMismatch {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to invalid configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
