use thiserror::Error;

use crate::model::ValidationReport;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum FluidError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{what} diverged at transform argument {s:.6e}")]
    Divergence { what: &'static str, s: f64 },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("assembly of {matrix} failed: row {row} sums to {sum:.12}")]
    Assembly {
        matrix: &'static str,
        row: String,
        sum: f64,
    },

    #[error("{what}: null space has dimension other than one")]
    NullSpace { what: &'static str },

    #[error("level {0} is a boundary point; query the probability masses instead")]
    AtBoundary(f64),

    #[error("root bracket failed for {what}: {detail}")]
    Bracket { what: &'static str, detail: String },

    #[error("Perron eigenvalue of {what} is {value:.9}, expected 1")]
    Eigen { what: &'static str, value: f64 },

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, FluidError>;
