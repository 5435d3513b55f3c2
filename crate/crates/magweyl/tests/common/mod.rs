//! Shared builders for the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use magweyl::expr::{position_names, ScalarField};
use magweyl::geometry::{MagneticField, VectorPotential};
use magweyl::grid::{sample_symbol, GridSpec, SymbolField};
use magweyl::C64;

/// Box length balancing position and momentum resolution of
/// `exp(-(x² + ξ²)/2)` on an `n`-point grid.
pub fn balanced_length(n: usize) -> f64 {
    (2.0 * PI * n as f64).sqrt()
}

/// `exp(-|x - x0|²/(2 s²) - s²|ξ - k0|²/2)` sampled on `grid`.
pub fn gaussian_symbol(grid: &GridSpec, x0: [f64; 2], k0: [f64; 2], s: f64) -> SymbolField {
    let d = grid.dim;
    sample_symbol(
        &move |x: &[f64], k: &[f64]| {
            let mut e = 0.0;
            for a in 0..d {
                e -= (x[a] - x0[a]).powi(2) / (2.0 * s * s) + s * s * (k[a] - k0[a]).powi(2) / 2.0;
            }
            C64::new(e.exp(), 0.0)
        },
        grid,
    )
}

/// A band-limited symbol built from a few Fourier modes strictly inside
/// the band (mode indices relative to the fundamental frequencies).
pub fn trig_symbol(grid: &GridSpec, modes: &[([i32; 2], [i32; 2], C64)]) -> SymbolField {
    let d = grid.dim;
    let kx = 2.0 * PI / grid.length;
    let kk = 2.0 * PI / (grid.n as f64 * grid.dxi());
    let modes = modes.to_vec();
    sample_symbol(
        &move |x: &[f64], k: &[f64]| {
            let mut s = C64::new(0.0, 0.0);
            for (mx, mk, c) in &modes {
                let mut ph = 0.0;
                for a in 0..d {
                    ph += kx * mx[a] as f64 * x[a] + kk * mk[a] as f64 * k[a];
                }
                s += c * C64::from_polar(1.0, ph);
            }
            s
        },
        grid,
    )
}

/// A smooth, genuinely position-dependent field on the torus of `grid`:
/// `B_12 = b0 + b1 cos(2π x1 / L)`, with the closed-form gauge
/// `A = (-b0 x2 / 2, b0 x1 / 2 + b1 L/(2π) sin(2π x1 / L))`.
pub fn trig_field(grid: &GridSpec, b0: f64, b1: f64) -> (MagneticField, VectorPotential) {
    let k = 2.0 * PI / grid.length;
    let names = position_names(2);
    let b = MagneticField::planar(
        ScalarField::parse(&format!("{b0} + {b1}*cos({k}*x1)"), &names).unwrap(),
    );
    let a = VectorPotential::parse(
        &[
            &format!("-{b0}*x2/2"),
            &format!("{b0}*x1/2 + {}*sin({k}*x1)", b1 / k),
        ],
        "closed-form",
    )
    .unwrap();
    (b, a)
}

/// Maximum relative deviation `max|a - b| / max|b|`.
pub fn rel_dist(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}
