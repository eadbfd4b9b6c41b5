use std::path::PathBuf;

use thiserror::Error;

use ldba_synth_core::eval::EvalError;
use ldba_synth_core::learner::{LearnerError, ModelFileError};
use ldba_synth_core::oracle::OracleError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Incompatible { path: PathBuf, source: ModelFileError },
    #[error("refusing to build the explicit product: {0}")]
    SizeCap(OracleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Oracle(OracleError),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 incompatible model, 4 size cap, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } | CliError::Write { .. } => 2,
            CliError::Learner(LearnerError::BadHyperparam(_) | LearnerError::UnsupportedAlgorithm(_)) => 2,
            CliError::Eval(EvalError::BadConfig(_)) => 2,
            CliError::Incompatible { .. } => 3,
            CliError::SizeCap(_) => 4,
            _ => 1,
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::SizeCap { .. } => CliError::SizeCap(e),
            other => CliError::Oracle(other),
        }
    }
}
