//! The `magweyl` binary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use magweyl_cli::{configure_threads, execute, Command};

#[derive(Parser)]
#[command(name = "magweyl", version, about = "Magnetic Weyl calculus studies driven by TOML configurations")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Run the checks and write only the manifest.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Scaled triangle fluxes and the remainders of their expansion.
    Flux(Common),
    /// Operator kernels of symbols, round trips and Hermiticity.
    Quantize(Common),
    /// Exact magnetic product and remainders of its truncations.
    Product(Common),
    /// Egorov defects over an ε-sweep.
    Egorov(Common),
    /// Band structure on the Brillouin-zone grid.
    BlochBands(Common),
    /// Berry connection, curvature and Chern number of one band.
    BlochBerry(Common),
    /// Semiclassical flow of one band in slowly varying fields.
    BlochFlow(Common),
    /// Current carried by a filled band.
    Hall(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Flux(c) => (Command::Flux, c),
        Sub::Quantize(c) => (Command::Quantize, c),
        Sub::Product(c) => (Command::Product, c),
        Sub::Egorov(c) => (Command::Egorov, c),
        Sub::BlochBands(c) => (Command::BlochBands, c),
        Sub::BlochBerry(c) => (Command::BlochBerry, c),
        Sub::BlochFlow(c) => (Command::BlochFlow, c),
        Sub::Hall(c) => (Command::Hall, c),
    };
    let result = configure_threads(common.threads)
        .and_then(|()| execute(command, &common.config, &common.out, common.check));
    match result {
        Ok(manifest) => {
            println!(
                "{}: {} checks passed; manifest in {}",
                command.name(),
                manifest.checks.len(),
                common.out.join("manifest.json").display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("magweyl {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
