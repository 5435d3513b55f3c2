//! Command-line driver of the `magweyl` library.
//!
//! ```text
//! magweyl <subcommand> --config <path> --out <dir> [--threads n] [--check]
//! ```
//!
//! Each subcommand reads a strict TOML configuration, runs one numerical
//! study, writes deterministic CSV tables plus a `manifest.json` into the
//! output directory and exits with a code describing the outcome (see
//! [`error`]).  With `--check` only the manifest is written.
//!
//! # Modules
//!
//! * [`config`] — shared configuration tables, numbers and constants;
//! * [`commands`] — the subcommands and their schemas;
//! * [`output`] — CSV tables, checks, timings and the manifest;
//! * [`error`] — failure classes and exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{execute, Command};
pub use error::{CliError, CliResult};

/// Sets the size of the global worker pool.  Only the first call takes
/// effect; later calls report the pool that is already running.
pub fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return error::config_err("--threads: must be at least 1");
        }
        // A pool that already exists (a second run in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
