//! `product`: the magnetic product of two symbols and its truncations.
//!
//! The exact product `f ⋆ g` is computed by double phase-space quadrature
//! with the full flux weight, for each ε of the sweep.  The two-parameter
//! expansion is tabulated once up to the largest requested order and
//! summed at each ε; the remainder of the order-`N` truncation is
//! `sup|f⋆g − Σ_{n≤N} Σ_{k≤n} ε^n λ^k (f⋆g)_{(n,k)}|`.
//!
//! # Outputs
//!
//! * `product.csv` — `eps, order, remainder`;
//! * `product_orders.csv` — `order, slope, expected_slope, min_slope`.
//!
//! # Checks
//!
//! * `remainder_slope_order_N` — fitted slope, at least `N + 1 − slope`;
//! * `assembly_agreement` — largest difference between the
//!   partition-enumeration and series-convolution assemblies of the terms.

use std::collections::BTreeMap;

use magweyl::fit::loglog_slope;
use magweyl::geometry::Parameters;
use magweyl::moyal::{direct_product, expansion_table, sum_table, Assembly, ExpansionRequest, MAX_EXPANSION_ORDER};
use serde::{Deserialize, Serialize};

use super::sample;
use crate::config::{require_range, Env, FieldConfig, GridConfig, Num};
use crate::error::{config_err_if, CliError, CliResult};
use crate::output::{fmt, worst, Run, Table};

/// Configuration of `product`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    /// Named constants.
    #[serde(default)]
    pub constants: BTreeMap<String, Num>,
    /// The symbol grid.
    pub grid: GridConfig,
    /// The magnetic field.
    #[serde(default)]
    pub field: FieldConfig,
    /// Symbols and sweep.
    pub product: ProductSection,
    /// Check thresholds.
    #[serde(default)]
    pub tolerances: ProductTolerances,
}

/// The `[product]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSection {
    /// Left factor, an expression in `x1.., p1..`.
    pub f: String,
    /// Right factor.
    pub g: String,
    /// Coupling, in `[0, 1]`.
    pub lambda: Num,
    /// Values of ε, in `(0, 1]`.
    pub eps: Vec<Num>,
    /// Truncation orders `N`.
    pub orders: Vec<usize>,
}

/// Thresholds of `product`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductTolerances {
    /// A slope passes if it is at least `N + 1 − slope`.
    pub slope: f64,
    /// Allowed difference between the two assemblies.
    pub assembly: f64,
}

impl Default for ProductTolerances {
    fn default() -> Self {
        Self {
            slope: 0.3,
            assembly: 1e-10,
        }
    }
}

/// Runs `product`.
pub fn execute(cfg: &ProductConfig, run: &mut Run) -> CliResult<()> {
    let (grid, env) = cfg.grid.resolve(&Env::builtin())?;
    let env = env.with_user(&cfg.constants)?;
    run.tolerances(&cfg.tolerances);
    let b = cfg.field.magnetic(grid.dim, &env)?;
    let s = &cfg.product;
    let lambda = require_range(env.num(&s.lambda, "product.lambda")?, 0.0, 1.0, "product.lambda")?;
    let epss = env.nums(&s.eps, "product.eps")?;
    config_err_if(epss.len() < 2, "product.eps: a slope fit needs at least two values")?;
    config_err_if(s.orders.is_empty(), "product.orders: at least one order is required")?;
    let max = *s.orders.iter().max().unwrap_or(&0);
    config_err_if(
        max > MAX_EXPANSION_ORDER,
        format!("product.orders: order {max} exceeds the cap {MAX_EXPANSION_ORDER}"),
    )?;
    let params: Vec<Parameters> = epss
        .iter()
        .map(|&e| Parameters::new(e, lambda).map_err(|err| CliError::Config(format!("product.eps: {err}"))))
        .collect::<CliResult<_>>()?;
    let f = sample(&s.f, &env, &grid, "product.f")?;
    let g = sample(&s.g, &env, &grid, "product.g")?;

    let table = run.stage("expansion table", || expansion_table(&f, &g, &b, max, Assembly::EpsThenLambda))?;
    let series = run.stage("expansion table (series assembly)", || {
        expansion_table(&f, &g, &b, max, Assembly::LambdaThenEps)
    })?;
    let mut gaps = Vec::new();
    for (row, other) in table.iter().zip(&series) {
        for (t, o) in row.iter().zip(other) {
            gaps.push(t.sup_dist(o).map_err(|e| CliError::from_stage("assembly comparison", e))?);
        }
    }
    run.check_at_most("assembly_agreement", worst(gaps), cfg.tolerances.assembly);

    let mut rows = Table::new("product.csv", vec!["eps".into(), "order".into(), "remainder".into()]);
    let mut remainders = vec![Vec::new(); s.orders.len()];
    for p in &params {
        let exact = run.stage(&format!("exact product, eps = {}", p.eps), || direct_product(&f, &g, &b, p))?;
        for (io, &order) in s.orders.iter().enumerate() {
            let req = ExpansionRequest::new(order, order, *p).map_err(|e| CliError::from_stage("truncation", e))?;
            let r = exact.sup_dist(&sum_table(&table, &req)).map_err(|e| CliError::from_stage("remainder", e))?;
            remainders[io].push(r);
            rows.push(vec![fmt(p.eps), order.to_string(), fmt(r)]);
        }
    }
    let mut orders = Table::new(
        "product_orders.csv",
        vec!["order".into(), "slope".into(), "expected_slope".into(), "min_slope".into()],
    );
    for (io, &order) in s.orders.iter().enumerate() {
        let expected = order as f64 + 1.0;
        let min = expected - cfg.tolerances.slope;
        let slope = run
            .stage(&format!("remainder slope, order {order}"), || loglog_slope(&epss, &remainders[io]))
            .map(|(s, _)| s)
            .unwrap_or(f64::NAN);
        run.check_at_least(&format!("remainder_slope_order_{order}"), slope, min);
        orders.push(vec![order.to_string(), fmt(slope), fmt(expected), fmt(min)]);
    }
    run.table(rows);
    run.table(orders);
    Ok(())
}
