use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("audio too short: {len} samples, need at least {min}")]
    AudioTooShort { len: usize, min: usize },

    #[error("unsupported audio format in {path}: {reason}")]
    AudioFormat { path: PathBuf, reason: String },

    #[error("invalid label {label} for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty frame stream")]
    EmptyStream,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::AudioTooShort { .. } => "audio_too_short",
            Error::AudioFormat { .. } => "audio_format",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::Manifest { .. } => "manifest",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Diverged { .. } => "diverged",
            Error::EmptyStream => "empty_stream",
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
            Error::Json(_) => "json",
        }
    }
}
