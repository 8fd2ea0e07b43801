use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HcalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {msg}")]
    Malformed { path: PathBuf, row: usize, msg: String },

    #[error("label out of range at row {row}: {label} >= {n_classes}")]
    LabelOutOfRange {
        row: usize,
        label: u64,
        n_classes: usize,
    },

    #[error("non-finite logit at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty dataset: {0}")]
    Empty(String),

    #[error("invalid split fraction {fraction} for {n} samples")]
    DegenerateSplit { fraction: f64, n: usize },

    #[error("invalid map hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0} (parameter blow-up)")]
    Diverged(String),

    #[error("window length {window} exceeds {available} atomic events")]
    WindowTooLarge { window: usize, available: usize },

    #[error("invalid configuration `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("metric {metric}: {msg}")]
    Metric { metric: &'static str, msg: String },

    #[error("bad model file {path}: {msg}")]
    ModelFormat { path: PathBuf, msg: String },
}

pub type Result<T, E = HcalError> = std::result::Result<T, E>;

impl HcalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HcalError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        HcalError::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn metric(metric: &'static str, msg: impl Into<String>) -> Self {
        HcalError::Metric {
            metric,
            msg: msg.into(),
        }
    }
}
