use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown document id {doc} (corpus has {n} documents)")]
    UnknownDocument { doc: usize, n: usize },

    #[error("rank must be >= 1, got {0}")]
    InvalidRank(usize),

    #[error("not a permutation of 0..{n}: {reason}")]
    InvalidPermutation { n: usize, reason: String },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("propensity of document {doc} is not positive ({value})")]
    NonPositivePropensity { doc: usize, value: f64 },

    #[error("group {0} has no documents")]
    EmptyGroup(usize),

    #[error("merit of group {group} is not positive ({merit})")]
    NonPositiveMerit { group: usize, merit: f64 },

    #[error("openness must be positive, got {0}")]
    NonPositiveOpenness(f64),

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("no group has documents left to rank")]
    NoCandidates,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{file}: row {row}: {msg}")]
    Parse { file: String, row: usize, msg: String },

    #[error("{file}: value out of [0,1] at ({row},{col}): {value}")]
    OutOfRange {
        file: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
