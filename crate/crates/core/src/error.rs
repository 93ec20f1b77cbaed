use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("train split is empty")]
    EmptyTrain,

    #[error("relation label `{0}` already carries the reserved reverse suffix")]
    ReverseSuffixCollision(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u32 },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),

    #[error("non-finite {what} at step {step} (examples {examples:?})")]
    NonFinite {
        what: &'static str,
        step: usize,
        examples: Vec<usize>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cannot build {n_lists} inverted lists over {points} points")]
    TooManyLists { n_lists: usize, points: usize },

    #[error("reference index is empty")]
    EmptyIndex,

    #[error("validation set must contain both positive and negative triples")]
    SingleLabelValidation,

    #[error("classification threshold has not been tuned")]
    SigmaNotTuned,

    #[error("test split is empty")]
    EmptyTestSplit,

    #[error("no negative candidates for relation `{0}`")]
    NoNegativeCandidates(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{artifact} was built with config hash {found:016x}, current config hashes to {expected:016x} (use --force to override)")]
    ConfigHashMismatch {
        artifact: String,
        expected: u64,
        found: u64,
    },

    #[error("missing prerequisite artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
