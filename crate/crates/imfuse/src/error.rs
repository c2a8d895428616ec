use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Core(#[from] imfuse_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss on case {case_id} at step {step}: {detail}")]
    Diverged {
        case_id: String,
        step: u64,
        detail: String,
    },
    #[error("usage: {0}")]
    Usage(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Usage(_) | HarnessError::Config(_))
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
