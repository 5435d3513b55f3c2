//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the magnetic Weyl calculus.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition (grid size, dimension,
    /// parameter range, mismatched containers, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// An analytic expression could not be parsed or references an unknown
    /// variable.
    #[error("expression error: {0}")]
    Expression(String),
    /// A numerical procedure did not reach its accuracy target (quadrature
    /// convergence, eigen-solver, band gap closure, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Serialization or deserialization failed.
    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
