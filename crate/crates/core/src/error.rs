use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the model, sampler, summaries and trial engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("mode undefined: shape {shape} must exceed 1")]
    ModeUndefined { shape: f64 },

    #[error("non-finite parameters while updating block `{block}`")]
    NonFinite { block: &'static str },

    #[error("degenerate split: auxiliary variable {name} = {value} must lie strictly inside (0, 1)")]
    DegenerateSplit { name: &'static str, value: f64 },

    #[error("components not mergeable: recovered {name} = {value} outside (0, 1)")]
    NotMergeable { name: &'static str, value: f64 },

    #[error("sampler failed at iteration {iteration} of chain {chain}: {source}")]
    Iteration {
        chain: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),

    #[error("BLAST comparator supports single-arm data only (got {arms} arms)")]
    MultiArmRefused { arms: usize },

    #[error("missing posterior probabilities for active cell (arm {arm}, subgroup {subgroup})")]
    MissingProbability { arm: usize, subgroup: usize },

    #[error("analysis {analysis} failed: {source}")]
    Analysis {
        analysis: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("configuration error:\n{0}")]
    Config(String),

    #[error("{failed} of {total} replicates failed (limit 1%); first failure: {first}")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error at {path}: {message}")]
    Serialization { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            value,
            reason,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
