//! Phase-space grids, sampled symbols and wave functions.
//!
//! # Symbol grid
//!
//! A [`GridSpec`] describes the periodic box `[-L/2, L/2)^d` sampled with
//! `N` points per axis, `Δx = L/N`, together with the dual momentum grid
//! `Δξ = 2π/L` (so the momentum box is `[-πN/L, πN/L)`).  A
//! [`SymbolField`] holds complex samples `f(x_i, ξ_k)` on the product
//! grid, stored row-major with the `d` position axes first and the `d`
//! momentum axes last.
//!
//! # Hilbert grid
//!
//! Operators act on functions of the *microscopic* variable: the position
//! operator is `Q = ε x`.  The [`HilbertGrid`] at scale `ε` has the same
//! spacing `Δ = L/N` as the symbol grid but `M = N/ε` points per axis, so
//! that `ε x` sweeps the macroscopic box exactly once.  `N/ε` must be an
//! integer.
//!
//! # Spectral calculus
//!
//! Derivatives, shifts and interpolation are spectral and follow the
//! symmetric Nyquist convention documented in [`crate::fft`].

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::expr::PhaseSpaceFunction;
use crate::fft::{self, centered_dft_axis};

/// Description of the periodic phase-space grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Configuration-space dimension (1 or 2).
    pub dim: usize,
    /// Points per axis (power of two, at least 8).
    pub n: usize,
    /// Full box length `L` of every position axis.
    pub length: f64,
}

impl GridSpec {
    /// Validates and builds a grid description.
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return domain(format!("dimension must be 1 or 2, got {dim}"));
        }
        if n < 8 || !n.is_power_of_two() {
            return domain(format!("points per axis must be a power of two >= 8, got {n}"));
        }
        if !(length.is_finite() && length > 0.0) {
            return domain(format!("box length must be positive and finite, got {length}"));
        }
        Ok(Self { dim, n, length })
    }

    /// Position spacing `Δx = L/N`.
    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Momentum spacing `Δξ = 2π/L`.
    pub fn dxi(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Position node `j` of any axis.
    pub fn x(&self, j: usize) -> f64 {
        fft::node(j, self.n, self.dx())
    }

    /// Momentum node `k` of any axis.
    pub fn xi(&self, k: usize) -> f64 {
        fft::node(k, self.n, self.dxi())
    }

    /// Number of position nodes `N^d`.
    pub fn n_pos(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Number of phase-space nodes `N^{2d}`.
    pub fn n_phase(&self) -> usize {
        self.n.pow(2 * self.dim as u32)
    }

    /// Spacing of phase-space axis `axis` (`Δx` for `axis < d`, else `Δξ`).
    pub fn spacing(&self, axis: usize) -> f64 {
        if axis < self.dim {
            self.dx()
        } else {
            self.dxi()
        }
    }

    /// Decodes a flat position index into per-axis indices.
    pub fn pos_multi(&self, flat: usize) -> [usize; 2] {
        decode(flat, self.n, self.dim)
    }

    /// Position coordinates of flat position index `flat`.
    pub fn pos_coords(&self, flat: usize) -> [f64; 2] {
        let m = self.pos_multi(flat);
        let mut out = [0.0; 2];
        for a in 0..self.dim {
            out[a] = self.x(m[a]);
        }
        out
    }

    /// Momentum coordinates of flat momentum index `flat`.
    pub fn mom_coords(&self, flat: usize) -> [f64; 2] {
        let m = decode(flat, self.n, self.dim);
        let mut out = [0.0; 2];
        for a in 0..self.dim {
            out[a] = self.xi(m[a]);
        }
        out
    }

    /// Phase-space cell volume `(Δx Δξ)^d`.
    pub fn cell(&self) -> f64 {
        (self.dx() * self.dxi()).powi(self.dim as i32)
    }

    /// The Hilbert grid at semiclassical scale `eps`.
    pub fn hilbert(&self, eps: f64) -> Result<HilbertGrid> {
        HilbertGrid::new(self, eps)
    }
}

/// Decodes a row-major flat index over `dim` axes of length `n`.
#[inline]
pub fn decode(flat: usize, n: usize, dim: usize) -> [usize; 2] {
    match dim {
        1 => [flat, 0],
        _ => [flat / n, flat % n],
    }
}

/// Encodes per-axis indices (row-major).
#[inline]
pub fn encode(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

/// The microscopic position grid on which operators act.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HilbertGrid {
    /// Configuration-space dimension.
    pub dim: usize,
    /// Points per axis, `M = N/ε`.
    pub m: usize,
    /// Symbol-grid points per axis `N`.
    pub n: usize,
    /// Spacing `Δ = L/N` (identical to the symbol grid's `Δx`).
    pub spacing: f64,
    /// Semiclassical parameter ε.
    pub eps: f64,
}

impl HilbertGrid {
    /// Builds the Hilbert grid of `grid` at scale `eps`.
    ///
    /// Fails unless `0 < eps <= 1` and `N/eps` is an integer.
    pub fn new(grid: &GridSpec, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
            return domain(format!("epsilon must lie in (0, 1], got {eps}"));
        }
        let ratio = grid.n as f64 / eps;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 * ratio || m as usize % 2 != 0 {
            return domain(format!(
                "N/epsilon = {ratio} must be an even integer (N = {}, epsilon = {eps})",
                grid.n
            ));
        }
        Ok(Self {
            dim: grid.dim,
            m: m as usize,
            n: grid.n,
            spacing: grid.dx(),
            eps,
        })
    }

    /// Total number of nodes `M^d`.
    pub fn size(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    /// Coordinate of node `j` along any axis.
    pub fn node(&self, j: usize) -> f64 {
        fft::node(j, self.m, self.spacing)
    }

    /// Coordinates of flat node index `flat`.
    pub fn coords(&self, flat: usize) -> [f64; 2] {
        let m = decode(flat, self.m, self.dim);
        let mut out = [0.0; 2];
        for a in 0..self.dim {
            out[a] = self.node(m[a]);
        }
        out
    }

    /// Quadrature weight `Δ^d`.
    pub fn weight(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Period of the grid `M Δ` along each axis.
    pub fn period(&self) -> f64 {
        self.m as f64 * self.spacing
    }
}

/// A complex symbol: anything that can be evaluated at a phase-space point.
pub trait Symbol: Sync {
    /// Value at `(x, ξ)`.
    fn eval(&self, x: &[f64], xi: &[f64]) -> C64;
}

impl<F> Symbol for F
where
    F: Fn(&[f64], &[f64]) -> C64 + Sync,
{
    fn eval(&self, x: &[f64], xi: &[f64]) -> C64 {
        self(x, xi)
    }
}

impl Symbol for PhaseSpaceFunction {
    fn eval(&self, x: &[f64], xi: &[f64]) -> C64 {
        let d = self.dim();
        let mut z = [0.0; 4];
        z[..d].copy_from_slice(&x[..d]);
        z[d..2 * d].copy_from_slice(&xi[..d]);
        C64::new(PhaseSpaceFunction::eval(self, &z[..2 * d]), 0.0)
    }
}

/// Complex samples of a symbol on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolField {
    /// Grid description.
    pub grid: GridSpec,
    /// Row-major samples, position axes first.
    pub values: Vec<C64>,
    /// Optional Hörmander order tag `m` of the sampled symbol.
    pub order: Option<f64>,
}

impl SymbolField {
    /// Wraps raw samples, checking their count.
    pub fn from_values(grid: GridSpec, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n_phase() {
            return domain(format!(
                "expected {} samples, got {}",
                grid.n_phase(),
                values.len()
            ));
        }
        Ok(Self {
            grid,
            values,
            order: None,
        })
    }

    /// The zero symbol.
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![C64::new(0.0, 0.0); grid.n_phase()],
            order: None,
        }
    }

    /// Flat index of `(position index, momentum index)`.
    #[inline]
    pub fn index(&self, ix: usize, ik: usize) -> usize {
        ix * self.grid.n_pos() + ik
    }

    /// Sample at flat position index `ix` and flat momentum index `ik`.
    #[inline]
    pub fn at(&self, ix: usize, ik: usize) -> C64 {
        self.values[self.index(ix, ik)]
    }

    /// Pointwise linear combination `a self + b other`.
    pub fn axpby(&self, a: C64, other: &SymbolField, b: C64) -> Result<SymbolField> {
        self.check_same(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            order: None,
        })
    }

    /// Pointwise sum.
    pub fn add(&self, other: &SymbolField) -> Result<SymbolField> {
        self.axpby(C64::new(1.0, 0.0), other, C64::new(1.0, 0.0))
    }

    /// Pointwise difference.
    pub fn sub(&self, other: &SymbolField) -> Result<SymbolField> {
        self.axpby(C64::new(1.0, 0.0), other, C64::new(-1.0, 0.0))
    }

    /// Pointwise product.
    pub fn mul(&self, other: &SymbolField) -> Result<SymbolField> {
        self.check_same(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x * y)
                .collect(),
            order: None,
        })
    }

    /// Multiplies by a complex scalar.
    pub fn scale(&self, c: C64) -> SymbolField {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
            order: self.order,
        }
    }

    /// Pointwise complex conjugate.
    pub fn conj(&self) -> SymbolField {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
            order: self.order,
        }
    }

    /// Supremum norm of the samples.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Discrete `L²(dx dξ)` norm.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell()).sqrt()
    }

    /// Discrete phase-space integral `∫ f dx dξ`.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.grid.cell()
    }

    /// Supremum distance to `other`.
    pub fn sup_dist(&self, other: &SymbolField) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    fn check_same(&self, other: &SymbolField) -> Result<()> {
        if self.grid != other.grid {
            return domain("symbols live on different grids");
        }
        Ok(())
    }

    /// Full centered spectrum (sign `-1` on every axis), unnormalised.
    pub fn spectrum(&self) -> Vec<C64> {
        let mut s = self.values.clone();
        let nd = 2 * self.grid.dim;
        for a in 0..nd {
            centered_dft_axis(&mut s, self.grid.n, nd, a, -1);
        }
        s
    }

    /// Evaluates the trigonometric interpolant at arbitrary phase-space
    /// points, given the precomputed [`SymbolField::spectrum`].
    pub fn interpolate_with(&self, spectrum: &[C64], x: &[f64], xi: &[f64]) -> C64 {
        let g = &self.grid;
        let d = g.dim;
        let n = g.n;
        let nd = 2 * d;
        let mut w = vec![vec![C64::new(0.0, 0.0); n]; nd];
        for a in 0..d {
            fft::interpolation_weights(n, g.dx(), x[a], &mut w[a]);
            fft::interpolation_weights(n, g.dxi(), xi[a], &mut w[d + a]);
        }
        // Contract the last axis first.
        let mut cur: Vec<C64> = spectrum.to_vec();
        for a in (0..nd).rev() {
            let len = cur.len() / n;
            let mut next = vec![C64::new(0.0, 0.0); len];
            for (i, nx) in next.iter_mut().enumerate() {
                let line = &cur[i * n..(i + 1) * n];
                *nx = line.iter().zip(&w[a]).map(|(u, v)| u * v).sum();
            }
            cur = next;
        }
        cur[0]
    }

    /// Evaluates the trigonometric interpolant at one point.
    pub fn interpolate(&self, x: &[f64], xi: &[f64]) -> C64 {
        let s = self.spectrum();
        self.interpolate_with(&s, x, xi)
    }
}

/// Samples `f` on every node of `grid`.
pub fn sample_symbol<S: Symbol + ?Sized>(f: &S, grid: &GridSpec) -> SymbolField {
    let np = grid.n_pos();
    let values: Vec<C64> = (0..grid.n_phase())
        .into_par_iter()
        .map(|i| {
            let x = grid.pos_coords(i / np);
            let xi = grid.mom_coords(i % np);
            f.eval(&x[..grid.dim], &xi[..grid.dim])
        })
        .collect();
    SymbolField {
        grid: *grid,
        values,
        order: None,
    }
}

/// Discrete symplectic Fourier transform
/// `(F_σ f)(x, ξ) = (2π)^{-d} ∫ exp(i(ξ·x' - x·ξ')) f(x', ξ') dx' dξ'`.
///
/// The discrete version is unitary for the counting measure and an
/// involution.
pub fn symplectic_fourier(f: &SymbolField) -> SymbolField {
    let g = f.grid;
    let d = g.dim;
    let n = g.n;
    let nd = 2 * d;
    let mut s = f.values.clone();
    for a in 0..d {
        // position axis x' -> output momentum ξ via exp(+i ξ x')
        centered_dft_axis(&mut s, n, nd, a, 1);
        // momentum axis ξ' -> output position x via exp(-i x ξ')
        centered_dft_axis(&mut s, n, nd, d + a, -1);
    }
    let np = g.n_pos();
    let norm = 1.0 / np as f64;
    let mut out = vec![C64::new(0.0, 0.0); s.len()];
    for jx in 0..np {
        for jk in 0..np {
            out[jk * np + jx] = s[jx * np + jk] * norm;
        }
    }
    SymbolField {
        grid: g,
        values: out,
        order: f.order,
    }
}

/// Spectral mixed derivative `∂_x^{α} ∂_ξ^{β} f`, where `x_orders[a]` and
/// `xi_orders[a]` are the per-axis orders.
pub fn spectral_derivative(f: &SymbolField, x_orders: &[usize], xi_orders: &[usize]) -> SymbolField {
    let g = f.grid;
    let d = g.dim;
    let n = g.n;
    let nd = 2 * d;
    let orders: Vec<usize> = (0..nd)
        .map(|a| {
            if a < d {
                x_orders.get(a).copied().unwrap_or(0)
            } else {
                xi_orders.get(a - d).copied().unwrap_or(0)
            }
        })
        .collect();
    let mut s = f.values.clone();
    for (a, &o) in orders.iter().enumerate() {
        if o == 0 {
            continue;
        }
        centered_dft_axis(&mut s, n, nd, a, -1);
        let h = g.spacing(a);
        let mult: Vec<C64> = (0..n)
            .map(|k| fft::derivative_multiplier(k, n, h, o) / n as f64)
            .collect();
        let inner = n.pow((nd - 1 - a) as u32);
        for (i, v) in s.iter_mut().enumerate() {
            *v *= mult[(i / inner) % n];
        }
        centered_dft_axis(&mut s, n, nd, a, 1);
    }
    SymbolField {
        grid: g,
        values: s,
        order: None,
    }
}

/// A wave function on a [`HilbertGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFunction {
    /// The microscopic grid.
    pub grid: HilbertGrid,
    /// Row-major samples.
    pub values: Vec<C64>,
    norm: f64,
}

impl WaveFunction {
    /// Wraps samples and caches the discrete `L²` norm.
    pub fn new(grid: HilbertGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.size() {
            return domain(format!(
                "expected {} samples, got {}",
                grid.size(),
                values.len()
            ));
        }
        let norm = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.weight()).sqrt();
        Ok(Self { grid, values, norm })
    }

    /// Samples a closure of the microscopic coordinates.
    pub fn from_fn(grid: HilbertGrid, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.size())
            .map(|i| f(&grid.coords(i)[..grid.dim]))
            .collect();
        Self::new(grid, values).expect("sizes agree by construction")
    }

    /// The normalised Gaussian wave packet
    /// `exp(-|x - q/ε|² / (2 σ²) + i p·x)`, centred at macroscopic
    /// position `q`, carrying momentum `p`, with microscopic width `σ`.
    pub fn gaussian(grid: HilbertGrid, q: &[f64], p: &[f64], sigma: f64) -> Self {
        let eps = grid.eps;
        let raw = Self::from_fn(grid, |x| {
            let mut e = 0.0;
            let mut ph = 0.0;
            for a in 0..grid.dim {
                let dx = x[a] - q[a] / eps;
                e -= dx * dx / (2.0 * sigma * sigma);
                ph += p[a] * x[a];
            }
            C64::from_polar(e.exp(), ph)
        });
        raw.normalized()
    }

    /// Discrete `L²` norm.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// The wave function scaled to unit norm.
    pub fn normalized(&self) -> Self {
        let s = 1.0 / self.norm;
        Self::new(self.grid, self.values.iter().map(|v| v * s).collect())
            .expect("sizes agree by construction")
    }

    /// Discrete inner product `⟨self, other⟩` (antilinear in `self`).
    pub fn inner(&self, other: &WaveFunction) -> C64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.grid.weight()
    }
}
