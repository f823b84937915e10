use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: {len} values, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("window id mismatch: prediction for `{prediction}`, window `{window}`")]
    WindowMismatch { prediction: String, window: String },

    #[error("unknown window id `{0}`")]
    UnknownWindow(String),

    #[error("unknown company `{0}`")]
    UnknownCompany(String),

    #[error("unknown confounder value `{0}`")]
    UnknownConfounder(String),

    #[error("{path}: missing column `{column}` (available: {available})")]
    MissingColumn {
        path: PathBuf,
        column: String,
        available: String,
    },

    #[error("{path}: no data rows")]
    EmptyFile { path: PathBuf },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sentiment provider failed: {0}")]
    Provider(String),

    #[error("forecaster `{model}` failed: {reason}")]
    Forecast { model: String, reason: String },

    #[error("http request failed after {attempts} attempt(s): {reason}; raw response: {raw:?}")]
    Http {
        attempts: usize,
        reason: String,
        raw: Option<String>,
    },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
