//! Shared fixtures of the `magweyl` benchmarks.
//!
//! The benchmarks live in `benches/`; this library only builds their
//! inputs so that every benchmark measures the same problems.
//!
//! # Fixtures
//!
//! * [`gaussian`] — a phase-space Gaussian on a grid;
//! * [`planar_field`] — `B_12 = b0 + b1 cos(2π x1 / L)` on the grid's box;
//! * [`chiral_potential`] — a two-dimensional periodic potential without
//!   inversion symmetry.

use std::f64::consts::PI;

use magweyl::bloch::PeriodicPotential;
use magweyl::geometry::MagneticField;
use magweyl::grid::{sample_symbol, GridSpec, SymbolField};
use magweyl::C64;

/// `exp(-|x - x0|²/2 - |ξ - k0|²/2)` sampled on `grid`.
pub fn gaussian(grid: &GridSpec, x0: [f64; 2], k0: [f64; 2]) -> SymbolField {
    let d = grid.dim;
    sample_symbol(
        &move |x: &[f64], k: &[f64]| {
            let e: f64 = (0..d).map(|a| -0.5 * ((x[a] - x0[a]).powi(2) + (k[a] - k0[a]).powi(2))).sum();
            C64::new(e.exp(), 0.0)
        },
        grid,
    )
}

/// `B_12 = b0 + b1 cos(2π x1 / L)`.
pub fn planar_field(grid: &GridSpec, b0: f64, b1: f64) -> MagneticField {
    let k = 2.0 * PI / grid.length;
    MagneticField::parse_planar(&format!("{b0} + {b1}*cos({k}*x1)")).expect("valid field expression")
}

/// `2cos(G₁·y + π) + 2cos(G₂·y + π) + cos((G₁+G₂)·y − π/2)`.
pub fn chiral_potential() -> PeriodicPotential {
    PeriodicPotential::cosines(2, &[([1, 0], 2.0, PI), ([0, 1], 2.0, PI), ([1, 1], 1.0, -PI / 2.0)])
        .expect("valid potential")
}
