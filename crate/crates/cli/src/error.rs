use std::io;
use std::path::PathBuf;

use dfosr::data::DataError;
use dfosr::gibbs::GibbsError;
use dfosr::simstudy::SimError;
use thiserror::Error;

use crate::bands::BandError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    MissingInput { path: PathBuf, source: io::Error },
    #[error("{path}, line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("invalid dataset: {0}")]
    Data(#[from] DataError),
    #[error("sampler failed: {0}")]
    Model(#[from] GibbsError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error("band computation failed: {0}")]
    Band(#[from] BandError),
    #[error("malformed draws file {path}: {source}")]
    Draws { path: PathBuf, source: serde_json::Error },
}

impl CliError {
    /// 1 for problems with the invocation itself, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingInput { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Output { path, source }
    }

    pub(crate) fn input(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::MissingInput { path, source }
    }
}
