use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the selection engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload: expected {expected} bytes after byte {offset}, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("could not place {classes} class centers {separation} apart in {dim} dimensions; use a smaller separation or a larger dim")]
    SeparationInfeasible {
        classes: usize,
        separation: f64,
        dim: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("subset of size {0} is too small for density estimation")]
    DegenerateSubset(usize),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("pool has no labels")]
    MissingLabels,

    #[error("candidate pool exhausted: selected {selected} of {budget}")]
    PoolExhausted { selected: usize, budget: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by how the engine was configured rather than by
    /// the data it was given.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InfeasibleBudget(_))
    }

    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}
