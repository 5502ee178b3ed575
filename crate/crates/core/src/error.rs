use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LiduError>;

#[derive(Debug, Error)]
pub enum LiduError {
    #[error("invalid score distribution (mean {mean}, variance {variance})")]
    InvalidDistribution { mean: f64, variance: f64 },

    #[error("duplicate item {0} in ranked prediction")]
    DuplicateItem(usize),

    #[error("cutoff {k} exceeds list length {len}")]
    ListTooShort { k: usize, len: usize },

    #[error("need at least {need} samples per item, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("unknown user {0}")]
    UnknownUser(String),

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("model has no variance tower")]
    MissingVarianceTower,

    #[error("id spaces differ between models: {0}")]
    IdSpaceMismatch(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("cannot sample {requested} cells out of {available}")]
    InfeasibleSample { requested: usize, available: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
