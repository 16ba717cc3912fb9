use thiserror::Error;

use crate::budget::Norm;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),

    #[error("cannot compose budgets over different metrics ({0} and {1})")]
    MixedNorms(Norm, Norm),

    #[error("cannot compose an empty list of budgets")]
    EmptyComposition,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("chaining undefined: radius is zero but target radius {beta} is positive")]
    ChainZeroRadius { beta: f64 },

    #[error("unsupported norm {0} for this operation")]
    UnsupportedNorm(Norm),

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("calibration rejected: {0}")]
    Calibration(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("audit precondition violated: {0}")]
    AuditPrecondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
