use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension {n} exceeds the enumeration limit of {max}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("group index {index} out of range for a partition with {n_groups} groups")]
    GroupIndex { index: usize, n_groups: usize },

    #[error("observation {value} outside the truncated support {{0..{bound}}}")]
    OutsideSupport { value: u32, bound: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("fit failed for {partition}: {reason}")]
    FitFailed { partition: String, reason: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
