//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named graph operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Backward was asked to start from a node that is not a scalar.
    #[error("backward requires a scalar loss node, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// A numeric check found a NaN or infinity where a finite value is required.
    #[error("non-finite value in `{context}`")]
    NonFinite { context: String },

    #[error("invalid graph node reference: {0}")]
    InvalidNode(usize),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("invalid sentence: {0}")]
    Sentence(String),

    #[error("decoder cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing prerequisite for phase `{phase}`: {detail}")]
    MissingPrerequisite { phase: String, detail: String },

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
