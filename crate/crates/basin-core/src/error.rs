use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("subset quota infeasible: class {class} has {available} rows, {requested} requested")]
    InfeasibleQuota {
        class: u32,
        available: usize,
        requested: usize,
    },

    #[error("poison source too small: {requested} requested, {available} available")]
    PoisonSourceExhausted { requested: usize, available: usize },

    #[error("datasets overlap: {0}")]
    DatasetsOverlap(String),

    #[error("bad idx file {path}: {reason}")]
    BadIdxFile { path: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
