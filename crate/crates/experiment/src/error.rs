use std::io;
use std::path::PathBuf;

use specreg_core::data::DataError;
use specreg_core::nn::checkpoint::CheckpointError;
use specreg_core::nn::NnError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("record error in {path}: {message}")]
    Records { path: PathBuf, message: String },
    #[error("{phase} failed: {source}")]
    Runtime { phase: &'static str, source: NnError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    pub fn runtime(phase: &'static str) -> impl FnOnce(NnError) -> Self {
        move |source| ExperimentError::Runtime { phase, source }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| ExperimentError::Io { path, source }
    }

    /// 1 config, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Usage(_) => 1,
            ExperimentError::Data(_) | ExperimentError::Checkpoint(_) | ExperimentError::Records { .. } => 2,
            ExperimentError::Runtime { .. } | ExperimentError::Io { .. } => 3,
        }
    }
}
