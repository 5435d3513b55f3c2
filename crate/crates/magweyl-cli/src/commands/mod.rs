//! Subcommands.
//!
//! Each subcommand owns a configuration schema (a strict TOML table set)
//! and an `execute` function that fills a [`Run`] with tables and checks.
//!
//! | command | computes |
//! |---------|----------|
//! | `flux` | scaled triangle fluxes and the remainders of their ε-expansion |
//! | `quantize` | operator kernels of symbols, with round-trip and Hermiticity checks |
//! | `product` | the exact magnetic product and the remainders of its truncations |
//! | `egorov` | Egorov defects over an ε-sweep and their decay rate |
//! | `bloch-bands` | band structure on the Brillouin-zone grid |
//! | `bloch-berry` | Berry connection, curvature, Rammal–Wilkinson term, Chern number |
//! | `bloch-flow` | the semiclassical flow of one band in slowly varying fields |
//! | `hall` | the current carried by a filled band |

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::config;
use crate::error::CliResult;
use crate::output::{Manifest, Run};

pub mod bloch;
pub mod egorov;
pub mod flux;
pub mod product;
pub mod quantize;

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Scaled flux and its expansion.
    Flux,
    /// Quantization of symbols.
    Quantize,
    /// Magnetic product asymptotics.
    Product,
    /// Egorov defects.
    Egorov,
    /// Band structure.
    BlochBands,
    /// Band geometry.
    BlochBerry,
    /// Semiclassical band dynamics.
    BlochFlow,
    /// Hall current.
    Hall,
}

impl Command {
    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            Self::Flux => "flux",
            Self::Quantize => "quantize",
            Self::Product => "product",
            Self::Egorov => "egorov",
            Self::BlochBands => "bloch-bands",
            Self::BlochBerry => "bloch-berry",
            Self::BlochFlow => "bloch-flow",
            Self::Hall => "hall",
        }
    }
}

fn drive<C: DeserializeOwned>(
    command: Command,
    config_path: &Path,
    out: &Path,
    check_only: bool,
    body: fn(&C, &mut Run) -> CliResult<()>,
) -> CliResult<Manifest> {
    let (cfg, raw) = config::load::<C>(config_path)?;
    let mut run = Run::new(command.name(), config_path, &raw, check_only);
    match body(&cfg, &mut run) {
        Ok(()) => run.finish(out),
        Err(e) => {
            run.abort(out, &e);
            Err(e)
        }
    }
}

/// Runs `command` on the configuration at `config_path`, writing into
/// `out`.  With `check_only`, only the manifest is written.
pub fn execute(command: Command, config_path: &Path, out: &Path, check_only: bool) -> CliResult<Manifest> {
    match command {
        Command::Flux => drive(command, config_path, out, check_only, flux::execute),
        Command::Quantize => drive(command, config_path, out, check_only, quantize::execute),
        Command::Product => drive(command, config_path, out, check_only, product::execute),
        Command::Egorov => drive(command, config_path, out, check_only, egorov::execute),
        Command::BlochBands => drive(command, config_path, out, check_only, bloch::execute_bands),
        Command::BlochBerry => drive(command, config_path, out, check_only, bloch::execute_berry),
        Command::BlochFlow => drive(command, config_path, out, check_only, bloch::execute_flow),
        Command::Hall => drive(command, config_path, out, check_only, bloch::execute_hall),
    }
}

/// Parses a phase-space expression (after constant substitution) and
/// samples it on `grid`.
pub(crate) fn sample(
    text: &str,
    env: &crate::config::Env,
    grid: &magweyl::grid::GridSpec,
    field: &str,
) -> CliResult<magweyl::grid::SymbolField> {
    let f = magweyl::expr::PhaseSpaceFunction::parse(grid.dim, &env.substitute(text))
        .map_err(|e| crate::error::CliError::Config(format!("{field}: {e}")))?;
    Ok(magweyl::grid::sample_symbol(&f, grid))
}
