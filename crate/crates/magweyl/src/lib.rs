//! Magnetic Weyl calculus on discretised phase space.
//!
//! This crate implements the gauge-covariant ("magnetic") Weyl calculus
//! for a charged particle in a magnetic field on `R^d`, `d ∈ {1, 2}`,
//! discretised on periodic grids, together with the semiclassical and
//! Bloch-electron applications built on it.
//!
//! # Modules
//!
//! * [`grid`] — phase-space grids, sampled symbols, wave functions,
//!   spectral derivatives and the symplectic Fourier transform.
//! * [`geometry`] — magnetic fields, vector potentials, gauges,
//!   circulations, triangle fluxes and the expansion of the scaled flux.
//! * [`quantizer`] — Weyl systems, magnetic Weyl quantization to operator
//!   kernels, Wigner transforms, dequantization and kernel composition.
//! * [`moyal`] — the exact magnetic Moyal product, its two-parameter and
//!   coupling-only expansions, commutators, magnetic Poisson brackets and
//!   the relation to minimal substitution.
//! * [`semiclassics`] — magnetic Hamiltonian flows, Heisenberg evolution
//!   and the Egorov defect.
//! * [`bloch`] — periodic potentials, the Zak transform, band structure,
//!   Berry curvature, effective semiclassical dynamics and Hall currents.
//!
//! Supporting modules: [`expr`] (analytic expressions), [`fft`] (centered
//! transforms), [`quad`] (Gauss–Legendre rules), [`linalg`] (dense
//! complex linear algebra), [`fit`] (log-log regression) and [`io`]
//! (serialization containers).
//!
//! # Units and scaling
//!
//! Position and momentum operators are `Q = ε x̂` and
//! `P = -i∇ - λ A(ε x̂)`.  Symbols live on a macroscopic grid; operators
//! act on a microscopic grid with `N/ε` points per axis (see
//! [`grid::HilbertGrid`]).

pub mod bloch;
pub mod error;
pub mod expr;
pub mod fft;
pub mod fit;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod moyal;
pub mod quad;
pub mod quantizer;
pub mod semiclassics;

pub use error::{Error, Result};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use num_complex::Complex64 as C64;
