use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A JSONL record that is not valid JSON.
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    /// A record that parsed but lacks a required field.
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },

    #[error("citation `{citation}` carries unknown label `{label}`")]
    UnknownLabel { citation: String, label: String },

    #[error("duplicate citation id `{0}`")]
    DuplicateId(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("token budget {budget} is too small; the fixed fields need {required} tokens")]
    BudgetTooSmall { budget: usize, required: usize },

    #[error("partition integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data for label `{label}`: {reason}")]
    InsufficientData { label: String, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("empty benchmark")]
    EmptyBenchmark,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Backend,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Policy(_) | Error::BudgetTooSmall { .. } => ErrorClass::Config,
            Error::Backend(_) | Error::ModelFormat(_) => ErrorClass::Backend,
            _ => ErrorClass::Data,
        }
    }

    /// 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Backend => 3,
        }
    }
}
