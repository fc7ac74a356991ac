//! Error type shared by all core modules.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be parsed; `line` is 1-based and includes headers.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("duplicate {kind} id: {id}")]
    DuplicateId { kind: &'static str, id: String },

    /// Referential integrity failure; `keys` lists every offending id.
    #[error("unresolved {kind} references: {keys:?}")]
    MissingReference { kind: &'static str, keys: Vec<String> },

    #[error("unknown {kind}: {id}")]
    UnknownEntity { kind: &'static str, id: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("score runs cover different id sets: {0}")]
    IdSetMismatch(String),

    #[error("correlation undefined: {0} series is constant")]
    ConstantSeries(&'static str),

    #[error("rank-deficient design, collinear terms: {terms:?}")]
    RankDeficient { terms: Vec<String> },

    #[error("need at least {needed} matched observations, found {got}")]
    TooFewMatches { needed: usize, got: usize },

    /// Catch-all for precondition violations with a self-contained message.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
