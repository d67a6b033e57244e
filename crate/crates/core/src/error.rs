use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): expected {expected}, got {actual}")]
    Shape {
        node: usize,
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain error at node {node} ({op}): {message}")]
    Domain {
        node: usize,
        op: &'static str,
        message: String,
    },

    #[error("unbound input `{0}`")]
    Unbound(String),

    #[error("backward requires a scalar output, node {node} has shape {shape:?}")]
    NotScalar { node: usize, shape: Vec<usize> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid hyper-parameters: {}", .0.join("; "))]
    Schema(Vec<String>),

    #[error("unit `{0}` must be fitted before transform")]
    Unfitted(&'static str),

    #[error("{}:{line}: {message}", path.display())]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("no trainable pairs: no left text has relations with two distinct labels")]
    NoTrainablePairs,

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown metric `{name}` (valid: {valid})")]
    UnknownMetric { name: String, valid: String },

    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("run cancelled")]
    Cancelled,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },

    #[error("all {} trials failed: {}", .0.len(), .0.join("; "))]
    AllTrialsFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Schema(_)
                | Error::UnknownModel(_)
                | Error::UnknownMetric { .. }
        )
    }
}
