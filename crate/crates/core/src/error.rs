use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale tape: recorded at parameter version {tape}, network is at version {net}")]
    StaleTape { tape: u64, net: u64 },

    #[error("non-finite gradient in coordinates {start}..={end}")]
    NonFiniteGradient { start: usize, end: usize },

    #[error("invalid class {class} (expected 1..={num_classes})")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("unknown class name {0:?}")]
    UnknownClassName(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed record at {path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("pool exhausted for class {class}: requested {requested}, {available} remaining")]
    PoolExhausted {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("remote provider: {0}")]
    Remote(String),

    #[error("embedding cache corrupted at {path}:{line}: {reason}")]
    CacheCorrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unresolved template placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),

    #[error("run aborted before round {round}; resumable state saved in {state}: {source}")]
    Aborted {
        round: usize,
        state: PathBuf,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors raised by external data providers, as opposed to bad input or configuration.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            Error::Aborted { source, .. } => source.is_provider_failure(),
            e => matches!(e, Error::Remote(_) | Error::PoolExhausted { .. } | Error::CacheCorrupt { .. }),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
