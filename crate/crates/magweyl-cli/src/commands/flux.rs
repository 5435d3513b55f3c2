//! `flux`: scaled triangle fluxes and the remainders of their expansion.
//!
//! For every configured triangle `(x, y, z)` and every ε the scaled flux
//! `γ_ε` is evaluated twice — as a line integral of the transversal gauge
//! and as an area integral of `B` — and the expansion remainders
//! `|γ_ε − Σ_{n≤N} ε^n ℒ_n|` are tabulated for `N = 1..max_order`.
//!
//! # Outputs
//!
//! * `flux.csv` — `triangle, eps, line_flux, area_flux, remainder_1, ..`;
//! * `flux_orders.csv` — `triangle, order, slope, expected_slope`.
//!
//! # Checks
//!
//! * `line_vs_area` — largest `|line − area|`;
//! * `remainder_slope_order_N` — largest `|slope − (N + 1)|` over triangles.

use std::collections::BTreeMap;

use magweyl::fit::loglog_slope;
use magweyl::geometry::{flux_expansion_terms, scaled_flux, scaled_flux_area, transversal_gauge_with};
use serde::{Deserialize, Serialize};

use crate::config::{Env, FieldConfig, Num};
use crate::error::{config_err, config_err_if, CliResult};
use crate::output::{fmt, worst, Run, Table};

/// Configuration of `flux`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The magnetic field (two dimensions).
    pub field: FieldConfig,
    /// Sweep parameters.
    pub flux: FluxSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: FluxTolerances,
}

/// One triangle: base point `x` and edge data `y`, `z`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triangle {
    /// Base point.
    pub x: Vec<Num>,
    /// First displacement.
    pub y: Vec<Num>,
    /// Second displacement.
    pub z: Vec<Num>,
}

/// The `[flux]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    /// Values of ε (positive).
    pub eps: Vec<Num>,
    /// Highest expansion order `N`.
    pub max_order: usize,
    /// Gauss–Legendre nodes of the area integral.
    #[serde(default = "default_area_nodes")]
    pub area_nodes: usize,
    /// Gauss–Legendre nodes of the transversal-gauge integral.
    #[serde(default = "default_gauge_nodes")]
    pub gauge_nodes: usize,
    /// Triangles.
    pub triangles: Vec<Triangle>,
}

fn default_area_nodes() -> usize {
    24
}

fn default_gauge_nodes() -> usize {
    32
}

/// Thresholds of `flux`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxTolerances {
    /// Allowed `|line − area|`.
    pub line_vs_area: f64,
    /// Allowed deviation of fitted remainder slopes from `N + 1`.
    pub slope: f64,
}

impl Default for FluxTolerances {
    fn default() -> Self {
        Self {
            line_vs_area: 1e-9,
            slope: 0.3,
        }
    }
}

/// Runs `flux`.
pub fn execute(cfg: &FluxConfig, run: &mut Run) -> CliResult<()> {
    let env = Env::builtin().with_user(&cfg.constants)?;
    run.tolerances(&cfg.tolerances);
    let b = cfg.field.magnetic(2, &env)?;
    let s = &cfg.flux;
    let epss = env.nums(&s.eps, "flux.eps")?;
    config_err_if(epss.len() < 2, "flux.eps: a slope fit needs at least two values")?;
    config_err_if(epss.iter().any(|e| *e <= 0.0), "flux.eps: values must be positive")?;
    config_err_if(s.max_order == 0, "flux.max_order: must be at least 1")?;
    if s.triangles.is_empty() {
        return config_err("flux.triangles: at least one triangle is required");
    }
    let a = run.stage("transversal gauge", || Ok(transversal_gauge_with(&b, s.gauge_nodes)))?;

    let mut header = vec!["triangle".into(), "eps".into(), "line_flux".into(), "area_flux".into()];
    header.extend((1..=s.max_order).map(|n| format!("remainder_{n}")));
    let mut table = Table::new("flux.csv", header);
    let mut orders = Table::new(
        "flux_orders.csv",
        vec!["triangle".into(), "order".into(), "slope".into(), "expected_slope".into()],
    );
    let mut line_gaps = Vec::new();
    let mut slope_gaps = vec![Vec::new(); s.max_order];
    for (it, tri) in s.triangles.iter().enumerate() {
        let f = format!("flux.triangles[{it}]");
        let x = env.vector(&tri.x, 2, &format!("{f}.x"))?;
        let y = env.vector(&tri.y, 2, &format!("{f}.y"))?;
        let z = env.vector(&tri.z, 2, &format!("{f}.z"))?;
        let terms = run.stage("flux expansion terms", || flux_expansion_terms(&b, &x, &y, &z, s.max_order))?;
        let mut remainders = vec![Vec::new(); s.max_order];
        for &eps in &epss {
            let line = run.stage("line flux", || scaled_flux(&a, &x, &y, &z, eps))?;
            let area = run.stage("area flux", || Ok(scaled_flux_area(&b, &x, &y, &z, eps, s.area_nodes)))?;
            line_gaps.push((line - area).abs());
            let mut row = vec![it.to_string(), fmt(eps), fmt(line), fmt(area)];
            let mut series = 0.0;
            for (n, t) in terms.iter().enumerate() {
                series += eps.powi(n as i32 + 1) * t;
                let r = (area - series).abs();
                remainders[n].push(r);
                row.push(fmt(r));
            }
            table.push(row);
        }
        for (n, rem) in remainders.iter().enumerate() {
            let order = n + 1;
            let expected = order as f64 + 1.0;
            let slope = run
                .stage(&format!("remainder slope, order {order}"), || loglog_slope(&epss, rem))
                .map(|(s, _)| s)
                .unwrap_or(f64::NAN);
            slope_gaps[n].push((slope - expected).abs());
            orders.push(vec![it.to_string(), order.to_string(), fmt(slope), fmt(expected)]);
        }
    }
    run.check_at_most("line_vs_area", worst(line_gaps), cfg.tolerances.line_vs_area);
    for (n, gaps) in slope_gaps.into_iter().enumerate() {
        run.check_at_most(&format!("remainder_slope_order_{}", n + 1), worst(gaps), cfg.tolerances.slope);
    }
    run.table(table);
    run.table(orders);
    Ok(())
}
