//! The magnetic Moyal product, its asymptotic expansions, commutators and
//! the minimal-substitution bridge to ordinary Weyl calculus.
//!
//! # Routes to the product
//!
//! * [`exact_product`] is the kernel route
//!   `dequantize(quantize(f) ⋄ quantize(g))`.  It is exactly consistent
//!   with the quantizer conventions and, by gauge covariance, depends on
//!   `B` only.
//! * [`direct_product`] evaluates the double phase-space sum
//!
//!   ```text
//!   (f ⋆ g)(x, ξ) = (2π)^{-2d} Σ_{y,z} e^{iξ·(y+z)} e^{-iλγ_ε(x, y, z)}
//!                   f̂(x - εz/2, y) ĝ(x + εy/2, z) Δ^{2d},
//!   f̂(x, y) = Σ_ξ e^{-iy·ξ} f(x, ξ) Δξ^d,
//!   ```
//!
//!   where `γ_ε(x, y, z)` is the scaled flux through the triangle with
//!   vertices `x - ε(y+z)/2`, `x + ε(y-z)/2`, `x + ε(y+z)/2`.  The flux
//!   is computed from the Fourier modes of `B_12` through the averaged
//!   field `B̃` (see [`flux_from_modes`]).  The shifts are trigonometric
//!   interpolations with the symmetric Nyquist convention and the `y`, `z`
//!   sums split the Nyquist channel into `±L/2`.  With these conventions
//!   the ε-Taylor coefficients of the sum are *exactly* the spectral
//!   bidifferential expressions of [`expansion_term`], so remainder
//!   studies have no discretization floor.
//!
//! # Expansion
//!
//! In formal variables (`Y ↔ -i∂_ξ f`, `Z ↔ -i∂_ξ g`, `X_f ↔ ∂_x f`,
//! `X_g ↔ ∂_x g`) the product is
//!
//! ```text
//! f ⋆ g = exp(iℒ₀) exp(-iλ Σ_{j≥1} ε^j ℒ_j(x; Y, Z)) [f ⊗ g]|_diag,
//! iℒ₀ = ε(-½ Z·X_f + ½ Y·X_g),
//! ```
//!
//! with `ℒ_j` the flux coefficients of
//! [`flux_expansion_terms`](crate::geometry::flux_expansion_terms).  The
//! `(n, k)` term collects `ε^n λ^k`; its coefficient structure is
//! `i^{k₀} (-i)^k / (k₀! Π k_j!)` over partitions
//! `k₀ + Σ j k_j = n`, `Σ k_j = k`.  Two independent assemblies are
//! provided ([`Assembly`]); they must agree termwise.
//!
//! With these conventions `(f⋆g)_{(1,0)} = (i/2)(∂_x f·∂_ξ g - ∂_ξ f·∂_x g)`
//! and, for constant `B`, `(f⋆g)_{(1,1)} = +(i/2) B_kl ∂_{ξ_k} f ∂_{ξ_l} g`,
//! so that `(i/ε)[h, f]_⋆ → {h, f}_B` as in [`magnetic_poisson`].

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::fft::{self, centered_dft_axis};
use crate::geometry::{flux_coefficient, for_each_multi_index, MagneticField, Parameters, VectorPotential};
use crate::grid::{decode, encode, spectral_derivative, GridSpec, SymbolField};
use crate::quad::unit_rule;
use crate::quantizer::{compose_kernels, dequantize, quantize};

/// Largest ε order the expansion machinery accepts.
pub const MAX_EXPANSION_ORDER: usize = 4;
/// Largest λ order accepted by [`lambda_term`].
pub const MAX_LAMBDA_ORDER: usize = 3;
/// Largest order accepted by [`minimal_substitution_symbol`].
pub const MAX_SUBSTITUTION_ORDER: usize = 2;

/// Gauss–Legendre nodes for the `t`-integral of the averaged field.
const FLUX_T_NODES: usize = 20;
/// Relative cutoff below which Fourier modes of `B` are dropped.
const MODE_CUTOFF: f64 = 1e-14;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// An explicit order request for the two-parameter expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionRequest {
    /// Largest ε order `N_ε`.
    pub n_eps: usize,
    /// Largest λ order `N_λ ≤ N_ε`.
    pub n_lambda: usize,
    /// Parameters at which the truncated series is summed.
    pub params: Parameters,
}

impl ExpansionRequest {
    /// Validates `0 ≤ N_λ ≤ N_ε ≤ 4`.
    pub fn new(n_eps: usize, n_lambda: usize, params: Parameters) -> Result<Self> {
        if n_eps > MAX_EXPANSION_ORDER {
            return domain(format!(
                "expansion order {n_eps} exceeds the cap {MAX_EXPANSION_ORDER}"
            ));
        }
        if n_lambda > n_eps {
            return domain(format!(
                "λ order {n_lambda} exceeds the ε order {n_eps}"
            ));
        }
        Ok(Self {
            n_eps,
            n_lambda,
            params,
        })
    }
}

/// Order in which the two-parameter series is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    /// Explicit enumeration of partitions `(k₀; k₁, …, k_n)` per `(n, k)`.
    EpsThenLambda,
    /// λ-power series `(-i)^k γ^k / k!` first, then convolution with the
    /// ε-twister series.
    LambdaThenEps,
}

fn check_pair(f: &SymbolField, g: &SymbolField) -> Result<()> {
    if f.grid != g.grid {
        return domain("symbols live on different grids");
    }
    Ok(())
}

fn check_field(grid: &GridSpec, b: &MagneticField) -> Result<()> {
    if b.dim() != grid.dim {
        return domain(format!(
            "magnetic field has dimension {}, grid has {}",
            b.dim(),
            grid.dim
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Kernel route
// ---------------------------------------------------------------------------

/// Exact magnetic Moyal product through the kernel route
/// `dequantize(quantize(f) ⋄ quantize(g))`.
pub fn exact_product(f: &SymbolField, g: &SymbolField, a: &VectorPotential, params: &Parameters) -> Result<SymbolField> {
    check_pair(f, g)?;
    let kf = quantize(f, a, params)?;
    let kg = quantize(g, a, params)?;
    let k = compose_kernels(&kf, &kg)?;
    dequantize(&k, a)
}

/// The non-magnetic ε-Weyl product (kernel route with `A ≡ 0`).
pub fn nonmagnetic_product(f: &SymbolField, g: &SymbolField, params: &Parameters) -> Result<SymbolField> {
    let a = VectorPotential::zero(f.grid.dim)?;
    exact_product(f, g, &a, params)
}

/// Magnetic Moyal commutator `h ⋆ f - f ⋆ h` through the kernel route.
pub fn moyal_commutator(h: &SymbolField, f: &SymbolField, a: &VectorPotential, params: &Parameters) -> Result<SymbolField> {
    check_pair(h, f)?;
    let kh = quantize(h, a, params)?;
    let kf = quantize(f, a, params)?;
    let hf = dequantize(&compose_kernels(&kh, &kf)?, a)?;
    let fh = dequantize(&compose_kernels(&kf, &kh)?, a)?;
    hf.sub(&fh)
}

/// Magnetic Moyal commutator `h ⋆ f - f ⋆ h` through [`direct_product`].
pub fn direct_commutator(h: &SymbolField, f: &SymbolField, b: &MagneticField, params: &Parameters) -> Result<SymbolField> {
    let hf = direct_product(h, f, b, params)?;
    let fh = direct_product(f, h, b, params)?;
    hf.sub(&fh)
}

// ---------------------------------------------------------------------------
// Magnetic Poisson bracket
// ---------------------------------------------------------------------------

/// Samples a position-space field on the `x`-nodes of `grid`.
fn sample_positions(field: &crate::expr::ScalarField, grid: &GridSpec) -> Vec<f64> {
    (0..grid.n_pos())
        .map(|ix| {
            let x = grid.pos_coords(ix);
            field.eval(&x[..grid.dim])
        })
        .collect()
}

/// Magnetic Poisson bracket
/// `{h, f}_B = Σ_l (∂_{ξ_l} h ∂_{x_l} f - ∂_{x_l} h ∂_{ξ_l} f) - λ B_lj ∂_{ξ_l} h ∂_{ξ_j} f`.
pub fn magnetic_poisson(h: &SymbolField, f: &SymbolField, b: &MagneticField, lambda: f64) -> Result<SymbolField> {
    check_pair(h, f)?;
    check_field(&h.grid, b)?;
    let g = h.grid;
    let d = g.dim;
    let np = g.n_pos();
    let mut unit = [[0usize; 2]; 2];
    for (l, u) in unit.iter_mut().enumerate() {
        u[l] = 1;
    }
    let z = [0usize; 2];
    let mut out = SymbolField::zeros(g);
    let mut dxi_h = Vec::new();
    let mut dxi_f = Vec::new();
    for l in 0..d {
        let hxi = spectral_derivative(h, &z[..d], &unit[l][..d]);
        let hx = spectral_derivative(h, &unit[l][..d], &z[..d]);
        let fxi = spectral_derivative(f, &z[..d], &unit[l][..d]);
        let fx = spectral_derivative(f, &unit[l][..d], &z[..d]);
        for i in 0..out.values.len() {
            out.values[i] += hxi.values[i] * fx.values[i] - hx.values[i] * fxi.values[i];
        }
        dxi_h.push(hxi);
        dxi_f.push(fxi);
    }
    if d == 2 && lambda != 0.0 && !b.is_zero() {
        let b12 = sample_positions(b.b12(), &g);
        for i in 0..out.values.len() {
            let bx = b12[i / np];
            // B_12 (∂_1 h ∂_2 f - ∂_2 h ∂_1 f)
            let s = dxi_h[0].values[i] * dxi_f[1].values[i] - dxi_h[1].values[i] * dxi_f[0].values[i];
            out.values[i] -= s * (lambda * bx);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Flux from Fourier modes
// ---------------------------------------------------------------------------

/// A Fourier mode of `B_12` sampled on the `x`-nodes: wave vector and the
/// field `b_q e^{iq·x}`.
#[derive(Debug, Clone)]
struct FieldMode {
    q: [f64; 2],
    values: Vec<C64>,
}

/// Decomposes `B_12` on the position grid into pure exponentials; a
/// Nyquist mode `cos(q_N x)` is split into `±q_N` with half weight.
fn field_modes(b: &MagneticField, grid: &GridSpec) -> Vec<FieldMode> {
    let d = grid.dim;
    if d != 2 || b.is_zero() {
        return Vec::new();
    }
    let n = grid.n;
    let np = grid.n_pos();
    let samples = sample_positions(b.b12(), grid);
    let mut spec: Vec<C64> = samples.iter().map(|&v| C64::new(v, 0.0)).collect();
    for a in 0..d {
        centered_dft_axis(&mut spec, n, d, a, -1);
    }
    let inv = 1.0 / np as f64;
    let max = spec.iter().map(|c| c.norm()).fold(0.0, f64::max) * inv;
    let mut modes = Vec::new();
    for (k, c) in spec.iter().enumerate() {
        let coef = c * inv;
        if coef.norm() <= MODE_CUTOFF * max || coef.norm() == 0.0 {
            continue;
        }
        let kk = decode(k, n, d);
        // Per axis: list of (frequency, weight).
        let mut opts: Vec<Vec<(f64, f64)>> = Vec::new();
        for &ka in kk.iter().take(d) {
            let w = fft::frequency(ka, n, grid.dx());
            if ka == 0 {
                opts.push(vec![(w, 0.5), (-w, 0.5)]);
            } else {
                opts.push(vec![(w, 1.0)]);
            }
        }
        for &(q0, w0) in &opts[0] {
            for &(q1, w1) in &opts[1] {
                let values = (0..np)
                    .map(|ix| {
                        let x = grid.pos_coords(ix);
                        coef * C64::from_polar(w0 * w1, q0 * x[0] + q1 * x[1])
                    })
                    .collect();
                modes.push(FieldMode { q: [q0, q1], values });
            }
        }
    }
    modes
}

/// `∫_0^1 s e^{isc} ds`.
fn s_moment(c: f64) -> C64 {
    if c.abs() < 0.5 {
        // Σ_n (ic)^n / (n! (n + 2))
        let mut term = ONE;
        let mut sum = C64::new(0.5, 0.0);
        for k in 1..30 {
            term *= C64::new(0.0, c) / k as f64;
            sum += term / (k as f64 + 2.0);
        }
        sum
    } else {
        let e = C64::from_polar(1.0, c);
        let ic = C64::new(0.0, c);
        e / ic + (e - ONE) / (c * c)
    }
}

/// Angular factor `χ_q(y, z)` of the averaged field:
/// `½ ∫_{-½}^{½} dt ∫_0^1 ds s [e^{iεs q·(ty - z/2)} + e^{iεs q·(y/2 + tz)}]`.
fn mode_factor(q: &[f64; 2], y: &[f64; 2], z: &[f64; 2], eps: f64) -> C64 {
    let qy = eps * (q[0] * y[0] + q[1] * y[1]);
    let qz = eps * (q[0] * z[0] + q[1] * z[1]);
    let rule = unit_rule(FLUX_T_NODES);
    let mut acc = ZERO;
    for (&tau, &w) in rule.nodes.iter().zip(&rule.weights) {
        let t = tau - 0.5;
        acc += (s_moment(t * qy - 0.5 * qz) + s_moment(0.5 * qy + t * qz)) * w;
    }
    acc * 0.5
}

/// Scaled triangle flux `γ_ε(x, y, z) = ε (y∧z) B̃_12(x; y, z)` at every
/// `x`-node, from the Fourier modes of `B_12`.  Exposed for testing; see
/// [`crate::geometry::scaled_flux_area`] for the independent oracle.
pub fn flux_from_modes(b: &MagneticField, grid: &GridSpec, y: &[f64], z: &[f64], eps: f64) -> Vec<f64> {
    let modes = field_modes(b, grid);
    let mut out = vec![0.0; grid.n_pos()];
    if modes.is_empty() {
        return out;
    }
    flux_into(&modes, &[y[0], y[1]], &[z[0], z[1]], eps, &mut out);
    out
}

fn flux_into(modes: &[FieldMode], y: &[f64; 2], z: &[f64; 2], eps: f64, out: &mut [f64]) {
    let wedge = y[0] * z[1] - y[1] * z[0];
    out.iter_mut().for_each(|v| *v = 0.0);
    if wedge == 0.0 {
        return;
    }
    for m in modes {
        let chi = mode_factor(&m.q, y, z, eps) * (eps * wedge);
        for (o, v) in out.iter_mut().zip(&m.values) {
            *o += (v * chi).re;
        }
    }
}

// ---------------------------------------------------------------------------
// Quadrature route
// ---------------------------------------------------------------------------

/// How the flux enters the quadrature weight.
#[derive(Debug, Clone, Copy)]
enum FluxWeight {
    /// `exp(-iλγ)`: the full product.
    Exponential(f64),
    /// `(-iγ)^k / k!`: the `k`-th λ coefficient.
    Power(usize),
}

impl FluxWeight {
    fn eval(self, gamma: f64) -> C64 {
        match self {
            FluxWeight::Exponential(l) => C64::from_polar(1.0, -l * gamma),
            FluxWeight::Power(0) => ONE,
            FluxWeight::Power(k) => {
                let fact: f64 = (1..=k).map(|i| i as f64).product();
                C64::new(0.0, -gamma).powu(k as u32) / fact
            }
        }
    }

    fn needs_flux(self) -> bool {
        !matches!(self, FluxWeight::Power(0) | FluxWeight::Exponential(0.0))
    }
}

/// A point of the `y` (or `z`) summation set.
#[derive(Debug, Clone, Copy)]
struct LatticePoint {
    /// Momentum-transform channel (flat).
    chan: usize,
    /// Per-axis integer offset in `[-N/2, N/2]`.
    r: [i64; 2],
    /// Coordinates `rΔ`.
    coords: [f64; 2],
    /// Quadrature weight (½ per Nyquist axis).
    weight: f64,
}

fn lattice_points(grid: &GridSpec) -> Vec<LatticePoint> {
    let d = grid.dim;
    let n = grid.n as i64;
    let half = n / 2;
    let mut out = Vec::new();
    let count = (n + 1).pow(d as u32);
    for flat in 0..count {
        let mut r = [0i64; 2];
        let mut rem = flat;
        for a in (0..d).rev() {
            r[a] = (rem % (n + 1)) as i64 - half;
            rem /= n + 1;
        }
        let mut idx = [0usize; 2];
        let mut coords = [0.0; 2];
        let mut weight = 1.0;
        for a in 0..d {
            idx[a] = (r[a] + half).rem_euclid(n) as usize;
            coords[a] = r[a] as f64 * grid.dx();
            if r[a].abs() == half {
                weight *= 0.5;
            }
        }
        out.push(LatticePoint {
            chan: encode(&idx[..d], grid.n),
            r,
            coords,
            weight,
        });
    }
    out
}

/// `[X-mode][y-channel]` spectrum of `f̂(x, y) = Σ_ξ e^{-iyξ} f Δξ^d`,
/// pre-divided by `N^d` so that an inverse centered transform over the
/// `x` axes evaluates it.
fn hat_spectrum(f: &SymbolField) -> Vec<C64> {
    let g = f.grid;
    let d = g.dim;
    let nd = 2 * d;
    let mut s = f.values.clone();
    for a in 0..nd {
        centered_dft_axis(&mut s, g.n, nd, a, -1);
    }
    let c = g.dxi().powi(d as i32) / g.n_pos() as f64;
    s.iter_mut().for_each(|v| *v *= c);
    s
}

/// Per-axis multipliers realising evaluation at `x - s` for all X-modes.
fn shift_table(grid: &GridSpec, s: &[f64; 2]) -> Vec<Vec<C64>> {
    (0..grid.dim)
        .map(|a| {
            (0..grid.n)
                .map(|k| fft::shift_multiplier(k, grid.n, grid.dx(), s[a]))
                .collect()
        })
        .collect()
}

fn mode_multiplier(table: &[Vec<C64>], kx: usize, n: usize, d: usize) -> C64 {
    let k = decode(kx, n, d);
    let mut m = table[0][k[0]];
    if d == 2 {
        m *= table[1][k[1]];
    }
    m
}

/// Target memory for the per-chunk accumulators of the quadrature route.
const ACCUMULATOR_BUDGET: usize = 1 << 28;

fn quadrature_product(f: &SymbolField, g: &SymbolField, b: &MagneticField, eps: f64, weight: FluxWeight) -> Result<SymbolField> {
    check_pair(f, g)?;
    let grid = f.grid;
    check_field(&grid, b)?;
    let d = grid.dim;
    let n = grid.n;
    let np = grid.n_pos();
    let fh = hat_spectrum(f);
    let gh = hat_spectrum(g);
    let points = lattice_points(&grid);
    let modes = if weight.needs_flux() {
        field_modes(b, &grid)
    } else {
        Vec::new()
    };
    if matches!(weight, FluxWeight::Power(k) if k > 0) && modes.is_empty() {
        return Ok(SymbolField::zeros(grid));
    }
    let acc_bytes = np * np * std::mem::size_of::<C64>();
    let chunks = (ACCUMULATOR_BUDGET / acc_bytes.max(1)).clamp(1, 32).min(points.len());
    let chunk_len = points.len().div_ceil(chunks);
    let partials: Vec<Vec<C64>> = points
        .par_chunks(chunk_len)
        .map(|zs| {
            let mut acc = vec![ZERO; np * np];
            let mut sz = vec![ZERO; np * np];
            let mut t = vec![ZERO; np];
            let mut gamma = vec![0.0; np];
            for zp in zs {
                // S_z[x][y-chan] = f̂(x - εz/2, y)
                let s = [0.5 * eps * zp.coords[0], 0.5 * eps * zp.coords[1]];
                let table = shift_table(&grid, &s);
                for kx in 0..np {
                    let m = mode_multiplier(&table, kx, n, d);
                    for ch in 0..np {
                        sz[kx * np + ch] = fh[kx * np + ch] * m;
                    }
                }
                for a in 0..d {
                    centered_dft_axis(&mut sz, n, 2 * d, a, 1);
                }
                for yp in &points {
                    // T(x) = ĝ(x + εy/2, z)
                    let s = [-0.5 * eps * yp.coords[0], -0.5 * eps * yp.coords[1]];
                    let table = shift_table(&grid, &s);
                    for (kx, tv) in t.iter_mut().enumerate() {
                        *tv = gh[kx * np + zp.chan] * mode_multiplier(&table, kx, n, d);
                    }
                    for a in 0..d {
                        centered_dft_axis(&mut t, n, d, a, 1);
                    }
                    let w = yp.weight * zp.weight;
                    let mut widx = [0usize; 2];
                    for a in 0..d {
                        widx[a] = (yp.r[a] + zp.r[a] + (n / 2) as i64).rem_euclid(n as i64) as usize;
                    }
                    let wch = encode(&widx[..d], n);
                    if modes.is_empty() {
                        let c = weight.eval(0.0) * w;
                        for ix in 0..np {
                            acc[ix * np + wch] += sz[ix * np + yp.chan] * t[ix] * c;
                        }
                    } else {
                        flux_into(&modes, &yp.coords, &zp.coords, eps, &mut gamma);
                        for ix in 0..np {
                            let c = weight.eval(gamma[ix]) * w;
                            acc[ix * np + wch] += sz[ix * np + yp.chan] * t[ix] * c;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![ZERO; np * np];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    for a in 0..d {
        centered_dft_axis(&mut acc, n, 2 * d, d + a, 1);
    }
    let c = (2.0 * PI).powi(-2 * d as i32) * grid.dx().powi(2 * d as i32);
    acc.iter_mut().for_each(|v| *v *= c);
    SymbolField::from_values(grid, acc)
}

/// Magnetic Moyal product by direct quadrature of the double phase-space
/// sum (see the module documentation).  Cost `O(N^{4d} log N)`; intended
/// as an oracle and for ε-sweeps where the kernel route would need very
/// large microscopic grids.
pub fn direct_product(f: &SymbolField, g: &SymbolField, b: &MagneticField, params: &Parameters) -> Result<SymbolField> {
    quadrature_product(f, g, b, params.eps, FluxWeight::Exponential(params.lambda))
}

/// The `k`-th coefficient `(f ⋆ g)_{(k)}` of the λ-expansion at fixed ε,
/// using the full (un-Taylored) flux: the quadrature sum with weight
/// `(-iγ_ε)^k / k!`.  `k = 0` is the non-magnetic ε-Weyl product.
pub fn lambda_term(f: &SymbolField, g: &SymbolField, b: &MagneticField, k: usize, params: &Parameters) -> Result<SymbolField> {
    if k > MAX_LAMBDA_ORDER {
        return domain(format!(
            "λ order {k} exceeds the cap {MAX_LAMBDA_ORDER}"
        ));
    }
    quadrature_product(f, g, b, params.eps, FluxWeight::Power(k))
}

/// `Σ_{k ≤ K} λ^k (f ⋆ g)_{(k)}`.
pub fn lambda_truncated_product(f: &SymbolField, g: &SymbolField, b: &MagneticField, order: usize, params: &Parameters) -> Result<SymbolField> {
    let mut out = SymbolField::zeros(f.grid);
    for k in 0..=order {
        let t = lambda_term(f, g, b, k, params)?;
        out = out.axpby(ONE, &t, C64::new(params.lambda.powi(k as i32), 0.0))?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Formal bidifferential polynomials
// ---------------------------------------------------------------------------

/// Exponents of `(X_f, Y, X_g, Z)`, two slots each.
type Mono = [u8; 8];

const XF: usize = 0;
const YF: usize = 2;
const XG: usize = 4;
const ZG: usize = 6;

/// A polynomial in the formal variables with coefficient fields over the
/// `x`-nodes.
#[derive(Debug, Clone, Default)]
struct Poly {
    terms: BTreeMap<Mono, Vec<C64>>,
}

impl Poly {
    fn one(np: usize) -> Self {
        let mut p = Poly::default();
        p.terms.insert([0; 8], vec![ONE; np]);
        p
    }

    fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, mono: Mono, coef: &[C64], scale: C64) {
        let e = self
            .terms
            .entry(mono)
            .or_insert_with(|| vec![ZERO; coef.len()]);
        for (a, c) in e.iter_mut().zip(coef) {
            *a += c * scale;
        }
    }

    fn add_assign(&mut self, other: &Poly, scale: C64) {
        for (m, c) in &other.terms {
            self.add_term(*m, c, scale);
        }
    }

    fn scaled(&self, scale: C64) -> Poly {
        let mut p = Poly::default();
        p.add_assign(self, scale);
        p
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = [0u8; 8];
                for i in 0..8 {
                    m[i] = ma[i] + mb[i];
                }
                let prod: Vec<C64> = ca.iter().zip(cb).map(|(a, b)| a * b).collect();
                out.add_term(m, &prod, ONE);
            }
        }
        out
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Building blocks of the expansion for one grid and field.
struct ExpansionAlgebra {
    np: usize,
    /// `iℒ₀ = -½ Z·X_f + ½ Y·X_g` (per unit ε).
    twister: Poly,
    /// `ℒ_j` for `j = 1..=max` (index `j - 1`).
    flux: Vec<Poly>,
}

impl ExpansionAlgebra {
    fn new(grid: &GridSpec, b: &MagneticField, max: usize) -> Result<Self> {
        let d = grid.dim;
        let np = grid.n_pos();
        let mut twister = Poly::default();
        let ones = vec![ONE; np];
        for m in 0..d {
            let mut a = [0u8; 8];
            a[ZG + m] = 1;
            a[XF + m] = 1;
            twister.add_term(a, &ones, C64::new(-0.5, 0.0));
            let mut c = [0u8; 8];
            c[YF + m] = 1;
            c[XG + m] = 1;
            twister.add_term(c, &ones, C64::new(0.5, 0.0));
        }
        let mut flux = Vec::new();
        for j in 1..=max {
            let mut p = Poly::default();
            if d == 2 && !b.is_zero() {
                let mut err = None;
                for_each_multi_index(d, j - 1, |m| {
                    if err.is_some() {
                        return;
                    }
                    let deriv = match b.derivative(m) {
                        Ok(f) => f,
                        Err(e) => {
                            err = Some(e);
                            return;
                        }
                    };
                    if deriv.is_zero() {
                        return;
                    }
                    let field: Vec<C64> = sample_positions(&deriv, grid)
                        .into_iter()
                        .map(|v| C64::new(v, 0.0))
                        .collect();
                    if field.iter().all(|c| c.norm() == 0.0) {
                        return;
                    }
                    for c in 1..=j {
                        let coef = flux_coefficient(j, c);
                        if coef == 0.0 {
                            continue;
                        }
                        let mut base = [0u8; 8];
                        for (pos, &mi) in m.iter().enumerate() {
                            if pos < c - 1 {
                                base[YF + mi] += 1;
                            } else {
                                base[ZG + mi] += 1;
                            }
                        }
                        // × (y_1 z_2 - y_2 z_1)
                        let mut m1 = base;
                        m1[YF] += 1;
                        m1[ZG + 1] += 1;
                        p.add_term(m1, &field, C64::new(coef, 0.0));
                        let mut m2 = base;
                        m2[YF + 1] += 1;
                        m2[ZG] += 1;
                        p.add_term(m2, &field, C64::new(-coef, 0.0));
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
            }
            flux.push(p);
        }
        Ok(Self { np, twister, flux })
    }

    fn power(base: &Poly, k: usize, np: usize, cache: &mut HashMap<usize, Poly>) -> Poly {
        if let Some(p) = cache.get(&k) {
            return p.clone();
        }
        let p = if k == 0 {
            Poly::one(np)
        } else {
            let prev = Self::power(base, k - 1, np, cache);
            prev.mul(base)
        };
        cache.insert(k, p.clone());
        p
    }

    /// Partition-sum assembly of the `(n, k)` polynomial.
    fn term_partitions(&self, n: usize, k: usize) -> Poly {
        let np = self.np;
        let mut out = Poly::default();
        let mut tw_cache = HashMap::new();
        let mut fl_caches: Vec<HashMap<usize, Poly>> = vec![HashMap::new(); n.max(1)];
        for k0 in 0..=n {
            let rest = n - k0;
            // compositions (k_1, …, k_rest) with Σ j k_j = rest, Σ k_j = k
            let mut ks = vec![0usize; rest];
            compositions(rest, k, 1, &mut ks, &mut |ks: &[usize]| {
                let mut p = Self::power(&self.twister, k0, np, &mut tw_cache)
                    .scaled(C64::new(1.0 / factorial(k0), 0.0));
                let mut denom = 1.0;
                for (jm1, &kj) in ks.iter().enumerate() {
                    if kj == 0 {
                        continue;
                    }
                    let lp = Self::power(&self.flux[jm1], kj, np, &mut fl_caches[jm1]);
                    p = p.mul(&lp);
                    denom *= factorial(kj);
                }
                let phase = C64::new(0.0, -1.0).powu(k as u32) / denom;
                out.add_assign(&p, phase);
            });
        }
        out
    }

    /// Series assembly: `(-i)^k γ^k / k!` as an ε-series, convolved with
    /// `exp(iℒ₀)`.
    fn term_series(&self, n: usize, k: usize) -> Poly {
        let np = self.np;
        // γ(ε) = Σ_{j≥1} ε^j ℒ_j, indexed by ε order.
        let mut gamma = vec![Poly::default(); n + 1];
        for j in 1..=n {
            gamma[j] = self.flux[j - 1].clone();
        }
        let mut gk = vec![Poly::default(); n + 1];
        gk[0] = Poly::one(np);
        for _ in 0..k {
            let mut next = vec![Poly::default(); n + 1];
            for (a, pa) in gk.iter().enumerate() {
                if pa.is_empty() {
                    continue;
                }
                for (b, pb) in gamma.iter().enumerate() {
                    if a + b > n || pb.is_empty() {
                        continue;
                    }
                    let prod = pa.mul(pb);
                    next[a + b].add_assign(&prod, ONE);
                }
            }
            gk = next;
        }
        let coef = C64::new(0.0, -1.0).powu(k as u32) / factorial(k);
        let mut out = Poly::default();
        let mut tw = Poly::one(np);
        for a in 0..=n {
            if a > 0 {
                tw = tw.mul(&self.twister).scaled(C64::new(1.0 / a as f64, 0.0));
            }
            let part = &gk[n - a];
            if part.is_empty() {
                continue;
            }
            out.add_assign(&tw.mul(part), coef);
        }
        out
    }
}

/// Calls `f` with every tuple `(k_1, …, k_len)` with `Σ j k_j = len` and
/// `Σ k_j = count`. `start` is the current `j`.
fn compositions(len: usize, count: usize, start: usize, ks: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    fn rec(j: usize, weight_left: usize, count_left: usize, ks: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if j > ks.len() {
            if weight_left == 0 && count_left == 0 {
                f(ks);
            }
            return;
        }
        let max = (weight_left / j).min(count_left);
        for kj in 0..=max {
            ks[j - 1] = kj;
            rec(j + 1, weight_left - j * kj, count_left - kj, ks, f);
        }
        ks[j - 1] = 0;
    }
    if len == 0 {
        if count == 0 {
            f(ks);
        }
        return;
    }
    rec(start, len, count, ks, f);
}

/// Cache of spectral derivatives of one symbol.
struct DerivativeCache<'a> {
    f: &'a SymbolField,
    cache: HashMap<[u8; 4], SymbolField>,
}

impl<'a> DerivativeCache<'a> {
    fn new(f: &'a SymbolField) -> Self {
        Self {
            f,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, x: [u8; 2], xi: [u8; 2]) -> &SymbolField {
        let key = [x[0], x[1], xi[0], xi[1]];
        let f = self.f;
        let d = f.grid.dim;
        self.cache.entry(key).or_insert_with(|| {
            let xo = [x[0] as usize, x[1] as usize];
            let ko = [xi[0] as usize, xi[1] as usize];
            spectral_derivative(f, &xo[..d], &ko[..d])
        })
    }
}

fn evaluate_poly(p: &Poly, f: &SymbolField, g: &SymbolField) -> Result<SymbolField> {
    let grid = f.grid;
    let np = grid.n_pos();
    let mut out = SymbolField::zeros(grid);
    let mut cf = DerivativeCache::new(f);
    let mut cg = DerivativeCache::new(g);
    for (m, coef) in &p.terms {
        if coef.iter().all(|c| c.norm() == 0.0) {
            continue;
        }
        let ny = (m[YF] + m[YF + 1]) as u32;
        let nz = (m[ZG] + m[ZG + 1]) as u32;
        let factor = C64::new(0.0, -1.0).powu(ny + nz);
        let df = cf.get([m[XF], m[XF + 1]], [m[YF], m[YF + 1]]).values.clone();
        let dg = cg.get([m[XG], m[XG + 1]], [m[ZG], m[ZG + 1]]);
        for (i, o) in out.values.iter_mut().enumerate() {
            *o += coef[i / np] * factor * df[i] * dg.values[i];
        }
    }
    Ok(out)
}

fn check_term_order(n: usize, k: usize) -> Result<()> {
    if n > MAX_EXPANSION_ORDER {
        return domain(format!(
            "expansion order {n} exceeds the cap {MAX_EXPANSION_ORDER}"
        ));
    }
    if k > n {
        return domain(format!("λ order {k} exceeds ε order {n}"));
    }
    Ok(())
}

/// The `(n, k)` coefficient `(f ⋆ g)_{(n,k)}` of `ε^n λ^k`, assembled
/// with the partition sum.
pub fn expansion_term(f: &SymbolField, g: &SymbolField, b: &MagneticField, n: usize, k: usize) -> Result<SymbolField> {
    expansion_term_with(f, g, b, n, k, Assembly::EpsThenLambda)
}

/// The `(n, k)` coefficient with an explicit assembly order.
pub fn expansion_term_with(
    f: &SymbolField,
    g: &SymbolField,
    b: &MagneticField,
    n: usize,
    k: usize,
    assembly: Assembly,
) -> Result<SymbolField> {
    check_pair(f, g)?;
    check_field(&f.grid, b)?;
    check_term_order(n, k)?;
    let alg = ExpansionAlgebra::new(&f.grid, b, n.max(1))?;
    let p = match assembly {
        Assembly::EpsThenLambda => alg.term_partitions(n, k),
        Assembly::LambdaThenEps => alg.term_series(n, k),
    };
    evaluate_poly(&p, f, g)
}

/// All terms `(n, k)` with `k ≤ n ≤ max`, indexed `table[n][k]`.
pub fn expansion_table(
    f: &SymbolField,
    g: &SymbolField,
    b: &MagneticField,
    max: usize,
    assembly: Assembly,
) -> Result<Vec<Vec<SymbolField>>> {
    check_pair(f, g)?;
    check_field(&f.grid, b)?;
    check_term_order(max, 0)?;
    let alg = ExpansionAlgebra::new(&f.grid, b, max.max(1))?;
    let mut table = Vec::new();
    for n in 0..=max {
        let mut row = Vec::new();
        for k in 0..=n {
            let p = match assembly {
                Assembly::EpsThenLambda => alg.term_partitions(n, k),
                Assembly::LambdaThenEps => alg.term_series(n, k),
            };
            row.push(evaluate_poly(&p, f, g)?);
        }
        table.push(row);
    }
    Ok(table)
}

/// The truncated series `Σ_{n ≤ N_ε} Σ_{k ≤ min(n, N_λ)} ε^n λ^k (f⋆g)_{(n,k)}`.
pub fn truncated_product(f: &SymbolField, g: &SymbolField, b: &MagneticField, req: &ExpansionRequest) -> Result<SymbolField> {
    let table = expansion_table(f, g, b, req.n_eps, Assembly::EpsThenLambda)?;
    Ok(sum_table(&table, req))
}

/// Sums a precomputed [`expansion_table`] at the request's parameters.
pub fn sum_table(table: &[Vec<SymbolField>], req: &ExpansionRequest) -> SymbolField {
    let grid = table[0][0].grid;
    let mut out = SymbolField::zeros(grid);
    for (n, row) in table.iter().enumerate().take(req.n_eps + 1) {
        for (k, term) in row.iter().enumerate().take(req.n_lambda.min(n) + 1) {
            let c = req.params.eps.powi(n as i32) * req.params.lambda.powi(k as i32);
            for (o, v) in out.values.iter_mut().zip(&term.values) {
                *o += v * c;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Minimal substitution
// ---------------------------------------------------------------------------

/// The symbol `g = f + ε² g₂ + …` (truncated at order `N ≤ 2`) with
/// `Op^A(f) ≈ Op_ε(g ∘ ϑ^A)`, `ϑ^A(X, ξ) = (X, ξ - λA(X))`:
///
/// ```text
/// g₀ = f,  g₁ = 0,  g₂ = (λ/24) Σ_{b,c,l} ∂_b ∂_c A_l(X) ∂_{ξ_b} ∂_{ξ_c} ∂_{ξ_l} f.
/// ```
pub fn minimal_substitution_symbol(f: &SymbolField, a: &VectorPotential, params: &Parameters, order: usize) -> Result<SymbolField> {
    if order > MAX_SUBSTITUTION_ORDER {
        return domain(format!(
            "minimal-substitution order {order} exceeds the cap {MAX_SUBSTITUTION_ORDER}"
        ));
    }
    let mut out = f.clone();
    if order < 2 || params.lambda == 0.0 || a.is_zero() {
        return Ok(out);
    }
    let g2 = minimal_substitution_g2(f, a)?;
    let c = params.lambda * params.eps * params.eps;
    for (o, v) in out.values.iter_mut().zip(&g2.values) {
        *o += v * c;
    }
    Ok(out)
}

/// `(1/24) Σ_{b,c,l} ∂_b ∂_c A_l ∂_{ξ_b} ∂_{ξ_c} ∂_{ξ_l} f` (without λ).
pub fn minimal_substitution_g2(f: &SymbolField, a: &VectorPotential) -> Result<SymbolField> {
    let grid = f.grid;
    let d = grid.dim;
    let np = grid.n_pos();
    let mut out = SymbolField::zeros(grid);
    let zero = [0usize; 2];
    for l in 0..d {
        for b in 0..d {
            for c in 0..d {
                let field = a.components()[l].partial_multi(&[b, c])?;
                if field.is_zero() {
                    continue;
                }
                let coef = sample_positions(&field, &grid);
                let mut orders = [0usize; 2];
                orders[l] += 1;
                orders[b] += 1;
                orders[c] += 1;
                let df = spectral_derivative(f, &zero[..d], &orders[..d]);
                for (i, o) in out.values.iter_mut().enumerate() {
                    *o += df.values[i] * (coef[i / np] / 24.0);
                }
            }
        }
    }
    Ok(out)
}

/// The exact symbol `g` with `Op^A(f) = Op_ε(g ∘ ϑ^A)`:
/// `F₂g(X, u) = exp(-iλ u·(Ā(X, εu) - A(X))) F₂f(X, u)` with the segment
/// average `Ā(X, εu) = ∫_0^1 A(X + ε(s - ½)u) ds`.  Any real `eps`
/// (including negative values) is accepted.
pub fn minimal_substitution_exact(f: &SymbolField, a: &VectorPotential, eps: f64, lambda: f64) -> Result<SymbolField> {
    let grid = f.grid;
    let d = grid.dim;
    if a.dim() != d {
        return domain("vector potential and symbol have different dimensions");
    }
    let n = grid.n;
    let np = grid.n_pos();
    let nd = 2 * d;
    let mut s = f.values.clone();
    for ax in 0..d {
        centered_dft_axis(&mut s, n, nd, d + ax, -1);
    }
    let rule = unit_rule(crate::quad::LINE_NODES);
    let points = lattice_points(&grid);
    let phases: Vec<Vec<C64>> = (0..np)
        .into_par_iter()
        .map(|ix| {
            let x = grid.pos_coords(ix);
            let mut a0 = [0.0; 2];
            a.eval(&x[..d], &mut a0[..d]);
            let mut ph = vec![ZERO; np];
            for p in &points {
                let mut abar = [0.0; 2];
                let mut buf = [0.0; 2];
                for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let mut pt = [0.0; 2];
                    for k in 0..d {
                        pt[k] = x[k] + eps * (t - 0.5) * p.coords[k];
                    }
                    a.eval(&pt[..d], &mut buf[..d]);
                    for k in 0..d {
                        abar[k] += w * buf[k];
                    }
                }
                let dot: f64 = (0..d).map(|k| p.coords[k] * (abar[k] - a0[k])).sum();
                ph[p.chan] += C64::from_polar(p.weight, -lambda * dot);
            }
            ph
        })
        .collect();
    for ix in 0..np {
        for ch in 0..np {
            s[ix * np + ch] *= phases[ix][ch];
        }
    }
    for ax in 0..d {
        centered_dft_axis(&mut s, n, nd, d + ax, 1);
    }
    let inv = 1.0 / np as f64;
    s.iter_mut().for_each(|v| *v *= inv);
    SymbolField::from_values(grid, s)
}

/// Operator-norm defect `‖Op^A(f) - Op_ε(g_N ∘ ϑ^A)‖` of the order-`N`
/// minimal-substitution reconstruction.
pub fn minimal_substitution_defect(f: &SymbolField, a: &VectorPotential, params: &Parameters, order: usize) -> Result<f64> {
    let g = minimal_substitution_symbol(f, a, params, order)?;
    let lhs = quantize(f, a, params)?;
    let rhs = crate::quantizer::quantize_minimal_substitution(&g, a, params)?;
    let diff = &lhs.matrix - &rhs.matrix;
    let w = crate::quantizer::OperatorKernel::weight(&lhs.hilbert);
    Ok(crate::linalg::operator_norm(&diff) * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarField;
    use crate::geometry::scaled_flux_area;

    fn trig_field(grid: &GridSpec) -> MagneticField {
        let l = grid.length;
        let k = 2.0 * PI / l;
        MagneticField::planar(ScalarField::func(move |x: &[f64]| {
            0.7 + 0.3 * (k * x[0]).cos() + 0.2 * (k * x[1]).sin()
        }))
    }

    #[test]
    fn s_moment_branches_agree() {
        for &c in &[0.49, 0.5, 0.51, -0.5, 1e-6] {
            let series = {
                let mut term = ONE;
                let mut sum = C64::new(0.5, 0.0);
                for k in 1..40 {
                    term *= C64::new(0.0, c) / k as f64;
                    sum += term / (k as f64 + 2.0);
                }
                sum
            };
            assert!((s_moment(c) - series).norm() < 1e-14, "c = {c}");
        }
    }

    #[test]
    fn modal_flux_matches_area_quadrature() {
        let grid = GridSpec::new(2, 16, 10.0).unwrap();
        let b = trig_field(&grid);
        let y = [1.25, -0.625];
        let z = [0.625, 1.875];
        for &eps in &[1.0, 0.25] {
            let gam = flux_from_modes(&b, &grid, &y, &z, eps);
            for ix in [0usize, 37, 200] {
                let x = grid.pos_coords(ix);
                let oracle = scaled_flux_area(&b, &x, &y, &z, eps, 24);
                assert!((gam[ix] - oracle).abs() < 1e-12, "{} vs {}", gam[ix], oracle);
            }
        }
    }

    #[test]
    fn compositions_enumerate() {
        let mut seen = Vec::new();
        let mut ks = vec![0; 3];
        compositions(3, 2, 1, &mut ks, &mut |k: &[usize]| seen.push(k.to_vec()));
        assert_eq!(seen, vec![vec![1, 1, 0]]);
        let mut ks = vec![0; 4];
        let mut count = 0;
        compositions(4, 2, 1, &mut ks, &mut |_: &[usize]| count += 1);
        // 1+3, 2+2
        assert_eq!(count, 2);
    }

    #[test]
    fn request_guard() {
        let p = Parameters::new(0.5, 1.0).unwrap();
        assert!(ExpansionRequest::new(4, 4, p).is_ok());
        assert!(ExpansionRequest::new(5, 0, p).is_err());
        assert!(ExpansionRequest::new(2, 3, p).is_err());
    }
}
