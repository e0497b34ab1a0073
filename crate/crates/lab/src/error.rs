use std::path::PathBuf;

use metabnn_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("digest mismatch for {path}: expected {expected}, got {actual}")]
    Digest {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("every mirror failed for {file}: {attempts:?}")]
    AllMirrorsFailed { file: String, attempts: Vec<String> },
    #[error("numeric: {0}")]
    Numeric(#[from] CoreError),
    #[error("schema: column `{column}`: {reason}")]
    Schema { column: String, reason: String },
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Process exit code: 1 config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Schema { .. } | LabError::Json(_) => 1,
            LabError::Numeric(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::TooManySplits { .. } | CoreError::DimensionTooLarge { .. } => 1,
                CoreError::Idx(_) | CoreError::EmptyDataset => 2,
                _ => 3,
            },
            LabError::Data(_) | LabError::Digest { .. } | LabError::AllMirrorsFailed { .. } | LabError::Io { .. } | LabError::Csv(_) => 2,
        }
    }
}
