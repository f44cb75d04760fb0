use std::io;
use std::path::{Path, PathBuf};

use sleepnet::compute::CheckpointError;
use sleepnet::edf::EdfError;
use sleepnet::eval::EvalError;
use sleepnet::network::NetworkError;
use sleepnet::pipeline::PipelineError;
use sleepnet::scoring::ScoreError;
use sleepnet::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Train(TrainError::NonFinite { .. }) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        move |source| Self::Io { path, source }
    }

    pub fn checkpoint(path: impl AsRef<Path>) -> impl FnOnce(CheckpointError) -> Self {
        let path = path.as_ref().to_path_buf();
        move |source| Self::Checkpoint { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
