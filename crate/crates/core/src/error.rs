use thiserror::Error;

/// Errors raised while building or fitting models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid value for {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown fidelity id {0:?}")]
    UnknownFidelity(String),

    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("task {task}, point {point}: {replicates} replicate(s), at least 2 are needed for a sample variance")]
    InsufficientReplicates {
        task: usize,
        point: usize,
        replicates: usize,
    },

    #[error("kernel degeneracy: matrix of size {size} is not positive definite after jitter {last_jitter:e}")]
    KernelDegeneracy { size: usize, last_jitter: f64 },

    #[error("rank-deficient basis: column(s) {columns:?} are linearly dependent")]
    RankDeficientBasis { columns: Vec<usize> },

    #[error("negative predictive variance {value:e} at query {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, ModelError>;
