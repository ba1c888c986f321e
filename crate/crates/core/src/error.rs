use std::path::PathBuf;

use crate::rl::Checkpoint;

/// Errors raised anywhere in the co-adaptation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(&'static str),

    #[error("controller does not match generation: {0}")]
    ControllerMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimError(String),

    #[error("{name} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("reward function returned a non-finite value at {0}")]
    RewardError(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("covariance is not positive definite ({0})")]
    SingularCovariance(&'static str),

    #[error("replay pool is empty")]
    EmptyPool,

    #[error("non-finite numerics: {0}")]
    NumericsError(String),

    #[error("training aborted at episode {episode}: {reason}")]
    TrainingAborted {
        episode: usize,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },

    #[error("session {0} is closed")]
    SessionClosed(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("a session log with id {id:?} already exists in {dir}")]
    Collision { id: String, dir: PathBuf },

    #[error("failed to write {path}: {source}")]
    WriteError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse_json(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
