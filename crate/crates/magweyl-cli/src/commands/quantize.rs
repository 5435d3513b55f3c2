//! `quantize`: operator kernels of configured symbols.
//!
//! Each symbol is sampled on the grid, quantized in the configured gauge
//! (the `potential`, or the transversal gauge of `b12`) and dequantized
//! again.
//!
//! # Outputs
//!
//! * `quantize.csv` — `symbol, eps, lambda, gauge, hilbert_dim,
//!   operator_norm, norm_bound, hermiticity_defect, round_trip_error`;
//! * `kernel_<symbol>.json` — kernel containers, if `write_kernels`.
//!
//! # Checks (per symbol)
//!
//! * `round_trip_<symbol>` — `sup|dequantize(quantize f) − f| / sup|f|`;
//! * `hermiticity_<symbol>` — `‖K − K†‖ / ‖K‖` (symbols are real);
//! * `norm_bound_<symbol>` — `‖Op f‖ / bound − 1`, at most 0.

use std::collections::BTreeMap;

use magweyl::geometry::Parameters;
use magweyl::io::Container;
use magweyl::quantizer::{dequantize, norm_bound, quantize};
use serde::{Deserialize, Serialize};

use super::sample;
use crate::config::{Env, FieldConfig, GridConfig, Num};
use crate::error::{config_err, config_err_if, CliError, CliResult};
use crate::output::{fmt, Run, Table};

/// Configuration of `quantize`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The symbol grid.
    pub grid: GridConfig,
    /// The gauge.
    #[serde(default)]
    pub field: FieldConfig,
    /// Parameters and symbols.
    pub quantize: QuantizeSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: QuantizeTolerances,
}

/// A named symbol.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSymbol {
    /// Identifier (letters, digits, `_`, `-`).
    pub name: String,
    /// Expression in `x1.., p1..`.
    pub expr: String,
}

/// The `[quantize]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeSection {
    /// Semiclassical parameter, in `(0, 1]`.
    pub eps: Num,
    /// Coupling, in `[0, 1]`.
    pub lambda: Num,
    /// Write every kernel as a JSON container.
    #[serde(default)]
    pub write_kernels: bool,
    /// Symbols.
    pub symbols: Vec<NamedSymbol>,
}

/// Thresholds of `quantize`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeTolerances {
    /// Allowed relative round-trip error.
    pub round_trip: f64,
    /// Allowed relative anti-Hermitian part.
    pub hermiticity: f64,
    /// Allowed relative excess of the operator norm over its bound.
    pub norm_bound: f64,
}

impl Default for QuantizeTolerances {
    fn default() -> Self {
        Self {
            round_trip: 1e-9,
            hermiticity: 1e-10,
            norm_bound: 1e-12,
        }
    }
}

/// Runs `quantize`.
pub fn execute(cfg: &QuantizeConfig, run: &mut Run) -> CliResult<()> {
    let (grid, env) = cfg.grid.resolve(&Env::builtin())?;
    let env = env.with_user(&cfg.constants)?;
    run.tolerances(&cfg.tolerances);
    let a = cfg.field.vector_potential(grid.dim, &env)?;
    let s = &cfg.quantize;
    let params = Parameters::new(env.num(&s.eps, "quantize.eps")?, env.num(&s.lambda, "quantize.lambda")?)
        .map_err(|e| CliError::Config(format!("quantize: {e}")))?;
    if s.symbols.is_empty() {
        return config_err("quantize.symbols: at least one symbol is required");
    }
    for (i, sym) in s.symbols.iter().enumerate() {
        config_err_if(
            sym.name.is_empty() || !sym.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'),
            format!("quantize.symbols[{i}].name: `{}` is not a valid identifier", sym.name),
        )?;
        config_err_if(
            s.symbols[..i].iter().any(|o| o.name == sym.name),
            format!("quantize.symbols[{i}].name: duplicate `{}`", sym.name),
        )?;
    }

    let mut table = Table::new(
        "quantize.csv",
        [
            "symbol",
            "eps",
            "lambda",
            "gauge",
            "hilbert_dim",
            "operator_norm",
            "norm_bound",
            "hermiticity_defect",
            "round_trip_error",
        ]
        .map(String::from)
        .to_vec(),
    );
    for (i, sym) in s.symbols.iter().enumerate() {
        let f = sample(&sym.expr, &env, &grid, &format!("quantize.symbols[{i}].expr"))?;
        let k = run.stage(&format!("quantize {}", sym.name), || quantize(&f, &a, &params))?;
        let back = run.stage(&format!("dequantize {}", sym.name), || dequantize(&k, &a))?;
        let scale = f.sup_norm().max(f64::MIN_POSITIVE);
        let round_trip = run.stage("round trip", || back.sup_dist(&f))? / scale;
        let norm = run.stage(&format!("operator norm {}", sym.name), || Ok(k.norm()))?;
        let anti = run.stage("hermiticity", || k.sub(&k.adjoint()))?.norm() / norm.max(f64::MIN_POSITIVE);
        let bound = norm_bound(&f);
        run.check_at_most(&format!("round_trip_{}", sym.name), round_trip, cfg.tolerances.round_trip);
        run.check_at_most(&format!("hermiticity_{}", sym.name), anti, cfg.tolerances.hermiticity);
        run.check_at_most(
            &format!("norm_bound_{}", sym.name),
            norm / bound.max(f64::MIN_POSITIVE) - 1.0,
            cfg.tolerances.norm_bound,
        );
        table.push(vec![
            sym.name.clone(),
            fmt(params.eps),
            fmt(params.lambda),
            k.gauge.clone(),
            k.hilbert.size().to_string(),
            fmt(norm),
            fmt(bound),
            fmt(anti),
            fmt(round_trip),
        ]);
        if s.write_kernels {
            let json = Container::from_kernel(&k).to_json().map_err(|e| CliError::from_stage("kernel container", e))?;
            run.file(&format!("kernel_{}.json", sym.name), json);
        }
    }
    run.table(table);
    Ok(())
}
