//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

use crate::library::AbstractionId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LibraryError {
    #[error("embedding dimension mismatch: library uses {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding is not unit-normalized (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("embedding has zero norm or non-finite components")]
    DegenerateEmbedding,
    #[error("unknown abstraction id {0}")]
    UnknownId(AbstractionId),
    #[error("duplicate abstraction id {0}")]
    DuplicateId(AbstractionId),
    #[error("non-finite credit value {value} for {id}")]
    NonFinite { id: AbstractionId, value: f64 },
    #[error("kind of {0} cannot change")]
    KindChanged(AbstractionId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CreditError {
    #[error("no trial records to estimate from")]
    EmptyRecords,
    #[error("information gain undefined for {id}: extracted in {present} record(s), need {required}")]
    UndefinedIg {
        id: AbstractionId,
        present: usize,
        required: usize,
    },
    #[error("future information gain undefined for {id}: sampled in {present} record(s), absent from {absent}")]
    UndefinedFutureIg {
        id: AbstractionId,
        present: usize,
        absent: usize,
    },
}

/// Failure talking to a model or embedding endpoint.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ProviderError> },
    #[error("missing credentials: set {0}")]
    MissingCredentials(&'static str),
}

impl ProviderError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Malformed(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}: invalid `{key}`: {message}")]
    Invalid {
        path: String,
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt snapshot {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("corrupt run log {path} at line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported snapshot format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("snapshot embedding dimension {found} does not match configured {expected}")]
    Dimension { found: usize, expected: usize },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error("task pool is empty")]
    EmptyTaskPool,
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("every trial failed at iteration {iteration}; state checkpointed, last error: {last}")]
    ProviderOutage {
        iteration: u64,
        last: ProviderError,
    },
    #[error("embedding the task failed: {0}")]
    Embedding(ProviderError),
}
