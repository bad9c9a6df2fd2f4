use std::path::PathBuf;

use fluidq_core::FluidError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    Config(String),

    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),

    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),

    #[error(transparent)]
    Fluid(#[from] FluidError),

    #[error("{failed} table cell(s) could not be computed")]
    Tables { failed: usize },
}

impl CliError {
    /// 2 for an invalid model or configuration, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Fluid(FluidError::InvalidModel(_)) => 2,
            CliError::Fluid(_) | CliError::Tables { .. } => 3,
            CliError::Io(..) | CliError::Output(_) => 1,
        }
    }
}
