//! `egorov`: Egorov defects over an ε-sweep.
//!
//! For each ε the Heisenberg-evolved quantized observable is compared in
//! operator norm with the quantization of the classically transported
//! observable, `‖e^{itH/ε} Op(f) e^{−itH/ε} − Op(f ∘ Φ_t)‖`.  The decay
//! rate is the log-log slope of the defects.
//!
//! # Outputs
//!
//! * `egorov.csv` — `eps, defect[, free_defect]`;
//! * `egorov_fit.csv` — `quantity, slope, intercept`.
//!
//! # Checks
//!
//! * `defect_slope` — fitted slope, at least `min_slope`;
//! * `time_zero` — the defect at `t = 0` for the first ε;
//! * `free_floor` — (with `free_reference`) the largest free-motion defect,
//!   where the classical transport is exact.

use std::collections::BTreeMap;

use magweyl::fit::loglog_slope;
use magweyl::geometry::Parameters;
use magweyl::semiclassics::{egorov_defect, egorov_sweep, free_egorov_defect, EgorovSettings, Hamiltonian};
use serde::{Deserialize, Serialize};

use super::sample;
use crate::config::{require_range, Env, FieldConfig, GridConfig, Num};
use crate::error::{config_err_if, CliError, CliResult};
use crate::output::{fmt, worst, Run, Table};

/// Configuration of `egorov`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgorovConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The symbol grid.
    pub grid: GridConfig,
    /// The gauge.
    #[serde(default)]
    pub field: FieldConfig,
    /// Hamiltonian, observable and sweep.
    pub egorov: EgorovSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: EgorovTolerances,
}

/// The `[egorov]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgorovSection {
    /// Hamiltonian, an expression in `x1.., p1..`.
    pub hamiltonian: String,
    /// Observable.
    pub observable: String,
    /// Coupling, in `[0, 1]`.
    pub lambda: Num,
    /// Values of ε, in `(0, 1]`.
    pub eps: Vec<Num>,
    /// Evolution time.
    pub time: Num,
    /// RK4 step of the classical flow.
    pub dt: Num,
    /// Also evaluate the free-motion reference defect.
    #[serde(default)]
    pub free_reference: bool,
}

/// Thresholds of `egorov`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgorovTolerances {
    /// Smallest acceptable decay slope.
    pub min_slope: f64,
    /// Allowed defect at `t = 0`.
    pub time_zero: f64,
    /// Allowed free-motion defect.
    pub free_floor: f64,
}

impl Default for EgorovTolerances {
    fn default() -> Self {
        Self {
            min_slope: 1.7,
            time_zero: 1e-10,
            free_floor: 1e-5,
        }
    }
}

/// Runs `egorov`.
pub fn execute(cfg: &EgorovConfig, run: &mut Run) -> CliResult<()> {
    let (grid, env) = cfg.grid.resolve(&Env::builtin())?;
    let env = env.with_user(&cfg.constants)?;
    run.tolerances(&cfg.tolerances);
    let a = cfg.field.vector_potential(grid.dim, &env)?;
    let s = &cfg.egorov;
    let lambda = require_range(env.num(&s.lambda, "egorov.lambda")?, 0.0, 1.0, "egorov.lambda")?;
    let epss = env.nums(&s.eps, "egorov.eps")?;
    config_err_if(epss.len() < 2, "egorov.eps: a slope fit needs at least two values")?;
    for (i, &e) in epss.iter().enumerate() {
        Parameters::new(e, lambda).map_err(|err| CliError::Config(format!("egorov.eps[{i}]: {err}")))?;
    }
    let settings = EgorovSettings {
        time: env.num(&s.time, "egorov.time")?,
        dt: env.num(&s.dt, "egorov.dt")?,
    };
    config_err_if(settings.time < 0.0, "egorov.time: must be non-negative")?;
    config_err_if(settings.dt <= 0.0, "egorov.dt: must be positive")?;
    let h = Hamiltonian::parse(grid.dim, &env.substitute(&s.hamiltonian))
        .map_err(|e| CliError::Config(format!("egorov.hamiltonian: {e}")))?;
    let f = sample(&s.observable, &env, &grid, "egorov.observable")?;

    let p0 = Parameters::new(epss[0], lambda).map_err(|e| CliError::Config(format!("egorov.eps: {e}")))?;
    let zero = EgorovSettings { time: 0.0, ..settings };
    let d0 = run.stage("defect at t = 0", || egorov_defect(&h, &f, &a, &p0, &zero))?;
    run.check_at_most("time_zero", d0, cfg.tolerances.time_zero);

    let points = run.stage("Egorov sweep", || egorov_sweep(&h, &f, &a, lambda, &epss, &settings))?;
    let free = if s.free_reference {
        let mut v = Vec::new();
        for &e in &epss {
            let p = Parameters::new(e, lambda).map_err(|err| CliError::Config(format!("egorov.eps: {err}")))?;
            v.push(run.stage(&format!("free reference, eps = {e}"), || free_egorov_defect(&f, &p, &settings))?);
        }
        Some(v)
    } else {
        None
    };

    let mut header = vec!["eps".to_string(), "defect".to_string()];
    if free.is_some() {
        header.push("free_defect".into());
    }
    let mut table = Table::new("egorov.csv", header);
    for (i, p) in points.iter().enumerate() {
        let mut row = vec![fmt(p.eps), fmt(p.defect)];
        if let Some(fr) = &free {
            row.push(fmt(fr[i]));
        }
        table.push(row);
    }
    let defects: Vec<f64> = points.iter().map(|p| p.defect).collect();
    let (slope, intercept) = run
        .stage("defect slope", || loglog_slope(&epss, &defects))
        .unwrap_or((f64::NAN, f64::NAN));
    run.check_at_least("defect_slope", slope, cfg.tolerances.min_slope);
    let mut fit = Table::new("egorov_fit.csv", vec!["quantity".into(), "slope".into(), "intercept".into()]);
    fit.push(vec!["defect".into(), fmt(slope), fmt(intercept)]);
    if let Some(fr) = free {
        run.check_at_most("free_floor", worst(fr), cfg.tolerances.free_floor);
    }
    run.table(table);
    run.table(fit);
    Ok(())
}
