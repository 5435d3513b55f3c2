//! Failure classes of a run and their exit codes.
//!
//! # Exit codes
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | run completed, every check passed |
//! | 1 | I/O failure (unreadable config, unwritable output directory) |
//! | 2 | invalid configuration (syntax, unknown or missing fields, bad values) |
//! | 3 | numerical failure, or at least one check failed |

use std::fmt;

/// Why a run stopped.
#[derive(Debug)]
pub enum CliError {
    /// File-system failure.
    Io(String),
    /// The configuration is malformed or inconsistent.
    Config(String),
    /// A numerical stage failed.
    Numerical(String),
    /// The run finished but some checks failed.
    ChecksFailed(Vec<String>),
}

impl CliError {
    /// Process exit code of this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) | Self::ChecksFailed(_) => 3,
        }
    }

    /// Attributes a library error to the named stage.  Argument errors
    /// trace back to the configuration; everything else is numerical.
    pub fn from_stage(stage: &str, err: magweyl::Error) -> Self {
        match err {
            magweyl::Error::Domain(m) | magweyl::Error::Expression(m) => {
                Self::Config(format!("stage `{stage}`: {m}"))
            }
            magweyl::Error::Numerical(m) => Self::Numerical(format!("stage `{stage}`: {m}")),
            magweyl::Error::Serialization(e) => Self::Io(format!("stage `{stage}`: {e}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(m) => write!(f, "I/O error: {m}"),
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Numerical(m) => write!(f, "numerical error: {m}"),
            Self::ChecksFailed(names) => write!(f, "checks failed: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

/// Result alias of the driver.
pub type CliResult<T> = std::result::Result<T, CliError>;

/// Shorthand for a configuration error.
pub fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

/// A configuration error when `bad` holds.
pub fn config_err_if(bad: bool, msg: impl Into<String>) -> CliResult<()> {
    if bad {
        return config_err(msg);
    }
    Ok(())
}
