use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One evaluated point of an outer root-finding loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub lambda: f64,
    pub risk: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameter (loadings, alpha, distribution parameters).
    #[error("invalid parameter: {0}")]
    Validation(String),

    /// Sample data violates an invariant (negative loss, empty file, bad weights).
    #[error("invalid data: {0}")]
    Data(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A contract was built or consumed with parameters outside its domain.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("bracket failure: {0}")]
    Bracket(String),

    /// The risk value failed to decrease with lambda along the evaluated curve.
    #[error("risk value is not monotone in lambda between {} and {}", .curve.len().saturating_sub(2), .curve.len().saturating_sub(1))]
    NonMonotone { curve: Vec<Probe> },

    #[error("no convergence after {iterations} iterations (residual {residual:e}): {context}")]
    NonConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The brute-force oracle declined an instance that is too large.
    #[error("instance too large for the oracle: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
