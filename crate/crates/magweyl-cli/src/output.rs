//! CSV tables, the run manifest and the bookkeeping of checks and timings.
//!
//! # Determinism
//!
//! Floats are written with Rust's shortest round-trip formatting (`{:?}`),
//! rows are emitted in computation order and nothing time- or
//! thread-dependent enters a CSV, so repeated runs of one configuration
//! produce byte-identical tables.  Timings live only in the manifest.
//!
//! # Manifest
//!
//! `manifest.json` records the command, the configuration (echoed as
//! JSON), crate versions, the thread count, per-stage timings, the
//! tolerances in force, every check with its value and verdict, the list of
//! files written and the overall verdict `all_passed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Formats a float deterministically (shortest round-trip form).
pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// An in-memory CSV table.
#[derive(Debug, Clone)]
pub struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// An empty table written to `name`.
    pub fn new(name: &str, header: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    /// Appends a row; its length must match the header.
    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width of {}", self.name);
        self.rows.push(row);
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(&self.name);
        let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}

/// Comparison a check applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// `value ≤ tolerance`.
    #[serde(rename = "<=")]
    AtMost,
    /// `value ≥ tolerance`.
    #[serde(rename = ">=")]
    AtLeast,
}

/// One verified property of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    /// Identifier.
    pub name: String,
    /// Measured value.
    pub value: f64,
    /// Threshold.
    pub tolerance: f64,
    /// How `value` is compared with `tolerance`.
    pub relation: Relation,
    /// Verdict (false for non-finite values).
    pub passed: bool,
}

/// Wall-clock time of one stage.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    /// Stage name.
    pub stage: String,
    /// Seconds.
    pub seconds: f64,
}

/// The run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    /// Subcommand.
    pub command: String,
    /// Path of the configuration file.
    pub config_path: String,
    /// The configuration, echoed.
    pub config: Value,
    /// Crate versions.
    pub versions: BTreeMap<String, String>,
    /// Worker threads.
    pub threads: usize,
    /// Whether only the manifest was written.
    pub check_only: bool,
    /// Per-stage timings, in execution order.
    pub timings: Vec<Timing>,
    /// Tolerances in force.
    pub tolerances: Value,
    /// Checks, in execution order.
    pub checks: Vec<Check>,
    /// Files written to the output directory (besides the manifest).
    pub outputs: Vec<String>,
    /// Error that ended the run early, if any.
    pub error: Option<String>,
    /// All checks passed and no stage failed.
    pub all_passed: bool,
}

/// Accumulates tables, checks and timings of a run.
#[derive(Debug)]
pub struct Run {
    /// The manifest under construction.
    pub manifest: Manifest,
    tables: Vec<Table>,
    files: Vec<(String, String)>,
}

impl Run {
    /// Starts a run of `command` on the configuration at `config_path`.
    pub fn new(command: &str, config_path: &Path, config: &toml::Table, check_only: bool) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("magweyl".to_string(), magweyl::VERSION.to_string());
        versions.insert("magweyl-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            manifest: Manifest {
                command: command.to_string(),
                config_path: config_path.display().to_string(),
                config: serde_json::to_value(config).unwrap_or(Value::Null),
                versions,
                threads: rayon::current_num_threads(),
                check_only,
                timings: Vec::new(),
                tolerances: Value::Null,
                checks: Vec::new(),
                outputs: Vec::new(),
                error: None,
                all_passed: false,
            },
            tables: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Records the tolerances in force.
    pub fn tolerances<T: Serialize>(&mut self, tol: &T) {
        self.manifest.tolerances = serde_json::to_value(tol).unwrap_or(Value::Null);
    }

    /// Runs a library stage, timing it and attributing its error.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> magweyl::Result<T>) -> CliResult<T> {
        self.timed(name, || f().map_err(|e| CliError::from_stage(name, e)))
    }

    /// Runs a driver stage, timing it.
    pub fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f();
        self.manifest.timings.push(Timing {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn check(&mut self, name: &str, value: f64, tolerance: f64, relation: Relation) -> bool {
        let passed = value.is_finite()
            && match relation {
                Relation::AtMost => value <= tolerance,
                Relation::AtLeast => value >= tolerance,
            };
        self.manifest.checks.push(Check {
            name: name.to_string(),
            value,
            tolerance,
            relation,
            passed,
        });
        passed
    }

    /// Records the check `value ≤ tolerance`.
    pub fn check_at_most(&mut self, name: &str, value: f64, tolerance: f64) -> bool {
        self.check(name, value, tolerance, Relation::AtMost)
    }

    /// Records the check `value ≥ tolerance`.
    pub fn check_at_least(&mut self, name: &str, value: f64, tolerance: f64) -> bool {
        self.check(name, value, tolerance, Relation::AtLeast)
    }

    /// Queues a CSV table.
    pub fn table(&mut self, table: Table) {
        self.tables.push(table);
    }

    /// Queues a text file.
    pub fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn write_manifest(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Io(format!("cannot serialize the manifest: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes outputs (unless check-only) and the manifest to `dir`.
    /// Returns the manifest, or [`CliError::ChecksFailed`] if a check failed.
    pub fn finish(mut self, dir: &Path) -> CliResult<Manifest> {
        ensure_dir(dir)?;
        if !self.manifest.check_only {
            for t in &self.tables {
                t.write(dir)?;
                self.manifest.outputs.push(t.name.clone());
            }
            for (name, contents) in &self.files {
                let path = dir.join(name);
                fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
                self.manifest.outputs.push(name.clone());
            }
        }
        let failed: Vec<String> =
            self.manifest.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        self.manifest.all_passed = failed.is_empty();
        self.write_manifest(dir)?;
        if failed.is_empty() {
            Ok(self.manifest)
        } else {
            Err(CliError::ChecksFailed(failed))
        }
    }

    /// Writes a manifest describing a run that stopped with `err`.
    /// Failures to write are ignored: the original error is what matters.
    pub fn abort(mut self, dir: &Path, err: &CliError) {
        self.manifest.error = Some(err.to_string());
        self.manifest.all_passed = false;
        if ensure_dir(dir).is_ok() {
            let _ = self.write_manifest(dir);
        }
    }
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Largest value, or NaN if any value is NaN (so a failed measurement can
/// never be hidden by a later good one).
pub fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut w: f64 = 0.0;
    for v in values {
        if v.is_nan() {
            return f64::NAN;
        }
        w = w.max(v);
    }
    w
}
