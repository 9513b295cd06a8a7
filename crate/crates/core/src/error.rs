use std::path::PathBuf;

use crate::corpus::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("not enough {class} documents: need {needed}, have {available}")]
    Capacity {
        class: Label,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("pair layout violation: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("back-translation cache miss for document {0}")]
    CacheMiss(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("provider {provider} failed on {id}: {message}")]
    Provider {
        provider: String,
        id: String,
        message: String,
    },

    #[error("encoder failed at batch index {index}: {message}")]
    Encoder { index: usize, message: String },

    #[error("non-finite loss at step {step} (batch ids: {})", ids.join(", "))]
    NonFinite { step: u64, ids: Vec<String> },

    #[error("reducer {reducer} failed ({params}): {message}")]
    Reducer {
        reducer: String,
        params: String,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

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
}
