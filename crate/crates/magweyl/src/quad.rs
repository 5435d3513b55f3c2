//! Gauss–Legendre rules on the unit interval.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;

/// Default number of nodes for line integrals of vector potentials.
pub const LINE_NODES: usize = 24;

/// A Gauss–Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct UnitRule {
    /// Nodes in `(0, 1)`, symmetric about `1/2`.
    pub nodes: Vec<f64>,
    /// Weights summing to one.
    pub weights: Vec<f64>,
}

impl UnitRule {
    /// Integrates `f` over `[0, 1]`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Returns the cached `n`-node rule on `[0, 1]`.
pub fn unit_rule(n: usize) -> Arc<UnitRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<UnitRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(NonZeroUsize::new(n.max(1)).expect("nonzero"));
            let mut pairs: Vec<(f64, f64)> = gl
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Symmetrise exactly so that reflected integrals cancel to roundoff.
            let m = pairs.len();
            for i in 0..m / 2 {
                let (a, wa) = pairs[i];
                let (b, wb) = pairs[m - 1 - i];
                let d = 0.5 * ((1.0 - b) + a);
                let w = 0.5 * (wa + wb);
                pairs[i] = (d, w);
                pairs[m - 1 - i] = (1.0 - d, w);
            }
            if m % 2 == 1 {
                pairs[m / 2].0 = 0.5;
            }
            Arc::new(UnitRule {
                nodes: pairs.iter().map(|p| p.0).collect(),
                weights: pairs.iter().map(|p| p.1).collect(),
            })
        })
        .clone()
}
