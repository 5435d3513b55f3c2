//! Weyl systems, magnetic Weyl quantization, Wigner transforms and
//! dequantization.
//!
//! # Kernel convention
//!
//! The magnetic Weyl quantization of a symbol `f` is the operator with
//! kernel
//!
//! ```text
//! K(x, y) = exp(-iλ Γ^A_ε([x, y])) (F₂ f)(ε(x + y)/2, y - x),
//! (F₂ f)(X, u) = (2π)^{-d/2} ∫ exp(-i u·ξ) f(X, ξ) dξ,
//! ```
//!
//! acting as `(Op(f) u)(x) = (2π)^{-d/2} Σ_y K(x, y) u(y) Δ^d` on the
//! [`HilbertGrid`].  The operator matrix is therefore
//! `T = (2π)^{-d/2} Δ^d K`; the identity has `K = (2π)^{d/2} Δ^{-d} I`.
//!
//! # Discretisation
//!
//! * The momentum transform `F₂` is a centered DFT over the symbol's
//!   momentum grid, so `u = y - x` takes the `N` values
//!   `rΔ, r ∈ [-N/2, N/2)` per axis.  The channel `r = -N/2` is split
//!   symmetrically into `u = ±L/2` with weight `½` each; kernel entries
//!   with `|u| > L/2` vanish (they wrap around when `M = N`).
//! * The midpoint `ε(x + y)/2` generally falls between symbol-grid nodes;
//!   `F₂ f` is evaluated there by trigonometric interpolation in its first
//!   slot (symmetric Nyquist convention).  [`dequantize`] inverts exactly
//!   the same interpolation, so `dequantize ∘ quantize` is the identity
//!   on band-limited symbols.
//! * Circulations `Γ^A_ε([x, y]) = ε^{-1} Γ^A([εx, εy])` are taken along
//!   the straight segment of length `|u|` whose midpoint `x + u/2` is
//!   folded into the fundamental cell of the micro torus.  For potentials
//!   that are periodic on the torus this is simply `[x, x + u]`.
//!
//! # Weyl system
//!
//! `(W(Y) u)(x) = exp(-iλ Γ^A_ε([x, x + y])) exp(-iε η·(x + y/2)) u(x + y)`
//! for `Y = (y, η)`, with `y` a multiple of the grid spacing.  It obeys
//! `W(X) W(Y) = exp(iε σ(X, Y)/2) ω(εx̂; x, y) W(X + Y)` with
//! `σ(X, Y) = ξ·y - x·η` (see [`weyl_composition_phase`]).
//!
//! # Wigner transform
//!
//! `W(u, v)` is the phase-space function dual to quantization:
//! `⟨v, Op(f) u⟩ = (2πε)^{-d} ∫ f W(u, v) dX dξ` holds exactly for every
//! symbol on the grid.  When `M = N` this coincides with dequantizing the
//! rank-one operator `w ↦ ⟨v, w⟩ u`.  With this normalisation
//! `‖W(u, v)‖₂ ≈ (2πε)^{d/2} ‖u‖ ‖v‖`.
//!
//! # Dequantization
//!
//! For `M > N` each `u`-channel collects every micro offset of its alias
//! class `u + jL` and evaluates the `M`-point trigonometric interpolant of
//! the fine midpoint samples at the symbol nodes.  This is the exact
//! inverse of [`quantize`] on band-limited symbols and samples kernels of
//! products (which are not band-limited) correctly.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::expr::ScalarField;
use crate::fft::{self, centered_dft_axis};
use crate::geometry::{omega_phase, scaled_circulation, Parameters, VectorPotential};
use crate::grid::{decode, encode, symplectic_fourier, GridSpec, HilbertGrid, SymbolField, WaveFunction};
use crate::linalg::{self, CMatrix};

/// A dense operator kernel on the Hilbert grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorKernel {
    /// Symbol grid the kernel was built from.
    pub grid: GridSpec,
    /// Microscopic grid the operator acts on.
    pub hilbert: HilbertGrid,
    /// Gauge label of the vector potential used.
    pub gauge: String,
    /// Parameters used at construction.
    pub params: Parameters,
    /// Kernel values `K(x_i, y_j)`.
    pub matrix: CMatrix,
}

impl OperatorKernel {
    /// Normalisation `(2π)^{-d/2} Δ^d` turning kernel values into operator
    /// matrix entries.
    pub fn weight(hilbert: &HilbertGrid) -> f64 {
        (2.0 * PI).powf(-(hilbert.dim as f64) / 2.0) * hilbert.weight()
    }

    /// Builds a kernel from an operator matrix `T` (so `K = T / weight`).
    pub fn from_operator(
        grid: GridSpec,
        hilbert: HilbertGrid,
        gauge: impl Into<String>,
        params: Parameters,
        op: CMatrix,
    ) -> Self {
        let w = 1.0 / Self::weight(&hilbert);
        Self {
            grid,
            hilbert,
            gauge: gauge.into(),
            params,
            matrix: op * C64::new(w, 0.0),
        }
    }

    /// The identity operator.
    pub fn identity(grid: GridSpec, params: Parameters, gauge: impl Into<String>) -> Result<Self> {
        let h = grid.hilbert(params.eps)?;
        let n = h.size();
        Ok(Self::from_operator(grid, h, gauge, params, CMatrix::identity(n, n)))
    }

    /// The operator matrix `T = (2π)^{-d/2} Δ^d K`.
    pub fn operator(&self) -> CMatrix {
        &self.matrix * C64::new(Self::weight(&self.hilbert), 0.0)
    }

    /// Applies the operator to a wave function.
    pub fn apply(&self, u: &WaveFunction) -> Result<WaveFunction> {
        if u.grid != self.hilbert {
            return domain("wave function and kernel live on different grids");
        }
        let w = Self::weight(&self.hilbert);
        let v = nalgebra::DVector::from_column_slice(&u.values);
        let out = &self.matrix * v * C64::new(w, 0.0);
        WaveFunction::new(self.hilbert, out.iter().cloned().collect())
    }

    /// The adjoint operator's kernel `K†`.
    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            ..self.clone()
        }
    }

    /// Operator norm (largest singular value of the operator matrix).
    pub fn norm(&self) -> f64 {
        linalg::operator_norm(&self.operator())
    }

    /// Kernel of the difference `self - other`.
    pub fn sub(&self, other: &OperatorKernel) -> Result<Self> {
        if self.hilbert != other.hilbert {
            return domain("kernels live on different grids");
        }
        Ok(Self {
            matrix: &self.matrix - &other.matrix,
            ..self.clone()
        })
    }
}

/// Composition `(K1 ⋄ K2)(x, y) = (2π)^{-d/2} Σ_z K1(x, z) K2(z, y) Δ^d`.
pub fn compose_kernels(k1: &OperatorKernel, k2: &OperatorKernel) -> Result<OperatorKernel> {
    if k1.hilbert != k2.hilbert || k1.grid != k2.grid {
        return domain("cannot compose kernels on different grids");
    }
    if k1.gauge != k2.gauge {
        return domain(format!(
            "cannot compose kernels in different gauges ({} vs {})",
            k1.gauge, k2.gauge
        ));
    }
    let w = OperatorKernel::weight(&k1.hilbert);
    let m = linalg::matmul(&k1.matrix, &k2.matrix) * C64::new(w, 0.0);
    Ok(OperatorKernel {
        matrix: m,
        ..k1.clone()
    })
}

/// One representative of a momentum-transform channel: micro offset per
/// axis, weight and half-shift of the midpoint.
#[derive(Clone, Copy, Debug)]
struct Rep {
    offset: [i64; 2],
    weight: f64,
}

fn channel_reps(r: [i64; 2], dim: usize, n: usize) -> Vec<Rep> {
    let half = (n / 2) as i64;
    let mut reps = vec![Rep {
        offset: [0, 0],
        weight: 1.0,
    }];
    for a in 0..dim {
        let opts: Vec<(i64, f64)> = if r[a] == -half {
            vec![(-half, 0.5), (half, 0.5)]
        } else {
            vec![(r[a], 1.0)]
        };
        let mut next = Vec::new();
        for rep in &reps {
            for &(o, w) in &opts {
                let mut nr = *rep;
                nr.offset[a] = o;
                nr.weight *= w;
                next.push(nr);
            }
        }
        reps = next;
    }
    reps
}

/// Per-axis map from symbol X-modes (N of them) to entries of an M-point
/// spectrum for evaluation at the M-grid shifted by `s`: returns, for each
/// N-mode, up to two `(M-index, multiplier)` pairs.
fn mode_map(n: usize, m: usize, h_macro: f64, s: f64) -> Vec<Vec<(usize, C64)>> {
    (0..n)
        .map(|k| {
            let w = fft::frequency(k, n, h_macro);
            if k == 0 {
                if m > n {
                    vec![
                        (m / 2 - n / 2, C64::from_polar(0.5, w * s)),
                        (m / 2 + n / 2, C64::from_polar(0.5, -w * s)),
                    ]
                } else {
                    vec![(0, C64::new((w * s).cos(), 0.0))]
                }
            } else {
                vec![(k + m / 2 - n / 2, C64::from_polar(1.0, w * s))]
            }
        })
        .collect()
}

fn offset_coords(off: [i64; 2], dim: usize, spacing: f64) -> [f64; 2] {
    let mut u = [0.0; 2];
    for a in 0..dim {
        u[a] = off[a] as f64 * spacing;
    }
    u
}

fn column_of(i: usize, off: [i64; 2], h: &HilbertGrid) -> usize {
    let mi = decode(i, h.m, h.dim);
    let mut idx = [0usize; 2];
    for a in 0..h.dim {
        idx[a] = (mi[a] as i64 + off[a]).rem_euclid(h.m as i64) as usize;
    }
    encode(&idx[..h.dim], h.m)
}

/// `exp(-iλ Γ^A_ε([x_i, x_i + u]))` for every row `i`, the segment being
/// centred on the midpoint folded into the fundamental cell.
///
/// Folding makes the pairs `(x_i, u)` and `(x_i + u, -u)` traverse the same
/// segment in opposite directions even when it crosses the cell boundary,
/// so real symbols quantize to exactly Hermitian operators for any
/// (possibly non-periodic) potential.
fn row_phases(a: &VectorPotential, params: &Parameters, h: &HilbertGrid, u: &[f64]) -> Vec<C64> {
    let d = h.dim;
    if params.lambda == 0.0 || a.is_zero() {
        return vec![C64::new(1.0, 0.0); h.size()];
    }
    let period = h.period();
    (0..h.size())
        .map(|i| {
            let x = h.coords(i);
            let mut start = [0.0; 2];
            let mut end = [0.0; 2];
            for k in 0..d {
                let mid = x[k] + u[k] / 2.0;
                // The tolerance resolves the tie at ±period/2 identically for
                // both members of a pair.
                let fold = ((mid + period / 2.0) / period + 1e-9).floor() * period;
                start[k] = mid - fold - u[k] / 2.0;
                end[k] = mid - fold + u[k] / 2.0;
            }
            let g = scaled_circulation(a, params.eps, &start[..d], &end[..d]);
            C64::from_polar(1.0, -params.lambda * g)
        })
        .collect()
}

/// `(F₂ f)` spectrum: X-axes transformed (sign -1, unnormalised), momentum
/// axes transformed to `u`-channels with the `(2π)^{-d/2} Δξ^d` weight.
/// Layout: `[X-mode flat][channel flat]`.
fn f2_spectrum(f: &SymbolField) -> Vec<C64> {
    let g = f.grid;
    let d = g.dim;
    let nd = 2 * d;
    let mut s = f.values.clone();
    for a in 0..nd {
        centered_dft_axis(&mut s, g.n, nd, a, -1);
    }
    let c = (2.0 * PI).powf(-(d as f64) / 2.0) * g.dxi().powi(d as i32);
    for v in s.iter_mut() {
        *v *= c;
    }
    s
}

fn check_potential(grid: &GridSpec, a: &VectorPotential) -> Result<()> {
    if a.dim() != grid.dim {
        return domain(format!(
            "vector potential has dimension {}, grid has {}",
            a.dim(),
            grid.dim
        ));
    }
    Ok(())
}

/// Magnetic Weyl quantization of `f` in the gauge `a`.
pub fn quantize(f: &SymbolField, a: &VectorPotential, params: &Parameters) -> Result<OperatorKernel> {
    check_potential(&f.grid, a)?;
    let h = f.grid.hilbert(params.eps)?;
    quantize_with_phase(f, params, a.label(), |u| row_phases(a, params, &h, u))
}

/// Weyl-type quantization with a caller-supplied kernel phase: entry
/// `(x_i, x_i + u)` is `phase(u)[i] · (F₂ f)(ε x_i + ε u/2, u)`.
///
/// With `phase = exp(-iλ Γ^A_ε)` this is [`quantize`]; other phases realise
/// e.g. the ordinary Weyl quantization of `f ∘ ϑ` for momentum shifts `ϑ`.
pub fn quantize_with_phase<P>(f: &SymbolField, params: &Parameters, gauge: &str, phase: P) -> Result<OperatorKernel>
where
    P: Fn(&[f64]) -> Vec<C64> + Sync,
{
    let g = f.grid;
    let h = g.hilbert(params.eps)?;
    let d = g.dim;
    let n = g.n;
    let np = g.n_pos();
    let spec = f2_spectrum(f);
    let results: Vec<Vec<([i64; 2], Vec<C64>)>> = (0..np)
        .into_par_iter()
        .map(|ch| {
            let ci = decode(ch, n, d);
            let mut r = [0i64; 2];
            for a_ in 0..d {
                r[a_] = ci[a_] as i64 - (n / 2) as i64;
            }
            // X-spectrum of this channel.
            let col: Vec<C64> = (0..np).map(|kx| spec[kx * np + ch]).collect();
            if col.iter().all(|z| z.norm() == 0.0) {
                return Vec::new();
            }
            channel_reps(r, d, n)
                .into_iter()
                .map(|rep| {
                    let u = offset_coords(rep.offset, d, h.spacing);
                    let vals = interpolate_channel(&col, &g, &h, &u);
                    let ph = phase(&u[..d]);
                    let out: Vec<C64> = vals
                        .iter()
                        .zip(&ph)
                        .map(|(v, p)| v * p * rep.weight)
                        .collect();
                    (rep.offset, out)
                })
                .collect()
        })
        .collect();
    let size = h.size();
    let mut k = CMatrix::zeros(size, size);
    for chan in results {
        for (off, vals) in chan {
            for (i, v) in vals.into_iter().enumerate() {
                let j = column_of(i, off, &h);
                k[(i, j)] += v;
            }
        }
    }
    Ok(OperatorKernel {
        grid: g,
        hilbert: h,
        gauge: gauge.to_string(),
        params: *params,
        matrix: k,
    })
}

/// Ordinary (non-magnetic) Weyl quantization of `f ∘ ϑ^A`, where
/// `ϑ^A(X, ξ) = (X, ξ - λ A(X))`, evaluated exactly through the shift
/// theorem `F₂(f ∘ ϑ^A)(X, u) = exp(-iλ u·A(X)) (F₂ f)(X, u)`.
pub fn quantize_minimal_substitution(f: &SymbolField, a: &VectorPotential, params: &Parameters) -> Result<OperatorKernel> {
    check_potential(&f.grid, a)?;
    let h = f.grid.hilbert(params.eps)?;
    let d = h.dim;
    quantize_with_phase(f, params, "flat", |u| {
        (0..h.size())
            .map(|i| {
                let x = h.coords(i);
                let mut m = [0.0; 2];
                for k in 0..d {
                    m[k] = params.eps * (x[k] + 0.5 * u[k]);
                }
                let mut av = [0.0; 2];
                a.eval(&m[..d], &mut av[..d]);
                let dot: f64 = (0..d).map(|k| u[k] * av[k]).sum();
                C64::from_polar(1.0, -params.lambda * dot)
            })
            .collect()
    })
}

/// Evaluates the channel whose X-spectrum is `col` at the midpoints
/// `ε x_i + ε u / 2` of every Hilbert-grid row.
fn interpolate_channel(col: &[C64], g: &GridSpec, h: &HilbertGrid, u: &[f64]) -> Vec<C64> {
    let d = g.dim;
    let n = g.n;
    let m = h.m;
    let maps: Vec<Vec<Vec<(usize, C64)>>> = (0..d)
        .map(|a| mode_map(n, m, g.dx(), 0.5 * h.eps * u[a]))
        .collect();
    let mut b = vec![C64::new(0.0, 0.0); h.size()];
    let inv = 1.0 / (n.pow(d as u32)) as f64;
    for (kx, &c) in col.iter().enumerate() {
        if c.norm() == 0.0 {
            continue;
        }
        let km = decode(kx, n, d);
        if d == 1 {
            for &(i0, w0) in &maps[0][km[0]] {
                b[i0] += c * w0 * inv;
            }
        } else {
            for &(i0, w0) in &maps[0][km[0]] {
                for &(i1, w1) in &maps[1][km[1]] {
                    b[i0 * m + i1] += c * w0 * w1 * inv;
                }
            }
        }
    }
    for a in 0..d {
        centered_dft_axis(&mut b, m, d, a, 1);
    }
    b
}

/// Transpose of [`interpolate_channel`]: maps `M^d` row values to `N^d`
/// X-mode coefficients.
fn interpolate_channel_transpose(vals: &[C64], g: &GridSpec, h: &HilbertGrid, u: &[f64]) -> Vec<C64> {
    let d = g.dim;
    let n = g.n;
    let m = h.m;
    let maps: Vec<Vec<Vec<(usize, C64)>>> = (0..d)
        .map(|a| mode_map(n, m, g.dx(), 0.5 * h.eps * u[a]))
        .collect();
    let mut b = vals.to_vec();
    for a in 0..d {
        centered_dft_axis(&mut b, m, d, a, 1);
    }
    let inv = 1.0 / (n.pow(d as u32)) as f64;
    (0..g.n_pos())
        .map(|kx| {
            let km = decode(kx, n, d);
            let mut acc = C64::new(0.0, 0.0);
            if d == 1 {
                for &(i0, w0) in &maps[0][km[0]] {
                    acc += b[i0] * w0;
                }
            } else {
                for &(i0, w0) in &maps[0][km[0]] {
                    for &(i1, w1) in &maps[1][km[1]] {
                        acc += b[i0 * m + i1] * w0 * w1;
                    }
                }
            }
            acc * inv
        })
        .collect()
}

/// Micro offsets `o ≡ r (mod N)` with `|o| ≤ M/2` per axis (weight ½ on
/// the doubly represented `±M/2`), tensorised over axes.
fn alias_offsets(r: [i64; 2], dim: usize, n: usize, m: usize) -> Vec<([i64; 2], f64)> {
    let half_m = (m / 2) as i64;
    let n = n as i64;
    let mut out = vec![([0i64; 2], 1.0)];
    for a in 0..dim {
        let base = r[a].rem_euclid(n);
        let mut opts = Vec::new();
        let mut o = base - ((base + half_m) / n) * n;
        while o <= half_m {
            if o >= -half_m {
                let w = if o.abs() == half_m { 0.5 } else { 1.0 };
                opts.push((o, w));
            }
            o += n;
        }
        let mut next = Vec::new();
        for (off, w) in &out {
            for &(oa, wa) in &opts {
                let mut no = *off;
                no[a] = oa;
                next.push((no, w * wa));
            }
        }
        out = next;
    }
    out
}

/// Periodic Dirichlet kernel of the `m`-point trigonometric interpolant
/// with spacing `h` (symmetric Nyquist convention).
fn dirichlet(m: usize, h: f64, t: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..m {
        let w = fft::frequency(k, m, h);
        acc += if k == 0 {
            C64::new((w * t).cos(), 0.0)
        } else {
            C64::from_polar(1.0, w * t)
        };
    }
    acc / m as f64
}

/// Evaluates, at the symbol-grid nodes, the `M`-point trigonometric
/// interpolant of one channel's values at the fine midpoints
/// `ε x_i + s`.  Exact for symbols band-limited to the symbol grid, and
/// uses the full fine resolution otherwise.
fn resample_channel(vals: &[C64], g: &GridSpec, h: &HilbertGrid, shift: &[f64; 2]) -> Vec<C64> {
    let d = g.dim;
    let n = g.n;
    let m = h.m;
    let fine = h.eps * h.spacing;
    let mats: Vec<Vec<C64>> = (0..d)
        .map(|a| {
            let mut p = vec![C64::new(0.0, 0.0); n * m];
            for j in 0..n {
                let xj = g.x(j);
                for i in 0..m {
                    let t = xj - shift[a] - h.eps * h.node(i);
                    p[j * m + i] = dirichlet(m, fine, t);
                }
            }
            p
        })
        .collect();
    if d == 1 {
        return (0..n)
            .map(|j| (0..m).map(|i| mats[0][j * m + i] * vals[i]).sum())
            .collect();
    }
    // contract axis 1, then axis 0
    let mut tmp = vec![C64::new(0.0, 0.0); m * n];
    for i0 in 0..m {
        for j1 in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for i1 in 0..m {
                acc += mats[1][j1 * m + i1] * vals[i0 * m + i1];
            }
            tmp[i0 * n + j1] = acc;
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for j0 in 0..n {
        for j1 in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for i0 in 0..m {
                acc += mats[0][j0 * m + i0] * tmp[i0 * n + j1];
            }
            out[j0 * n + j1] = acc;
        }
    }
    out
}

/// Recovers the X-samples (on the symbol grid) of a channel from its
/// values at the shifted midpoints, combining per-axis multipliers.
fn recover_channel(vals: &[C64], g: &GridSpec, h: &HilbertGrid, shifts: &[Vec<(f64, f64)>]) -> Vec<C64> {
    let d = g.dim;
    let n = g.n;
    let m = h.m;
    let mut b = vals.to_vec();
    for a in 0..d {
        centered_dft_axis(&mut b, m, d, a, -1);
    }
    let inv_m = 1.0 / (m.pow(d as u32)) as f64;
    // Per-axis, per-mode recovery: c_k = N^{(1)} * Σ_entries ... / multiplier.
    // For each axis we build, for every N-mode k, a list of (M-index, coeff)
    // such that c_k = Σ coeff * b[M-index] (axis factor).
    let axis_rules: Vec<Vec<Vec<(usize, C64)>>> = (0..d)
        .map(|a| {
            (0..n)
                .map(|k| {
                    let w = fft::frequency(k, n, g.dx());
                    let reps = &shifts[a];
                    if m > n {
                        // Distinct columns: every representative was
                        // recovered separately; here `reps` has one entry.
                        let s = reps[0].0;
                        if k == 0 {
                            vec![
                                (m / 2 - n / 2, C64::from_polar(1.0, -w * s)),
                                (m / 2 + n / 2, C64::from_polar(1.0, w * s)),
                            ]
                        } else {
                            vec![(k + m / 2 - n / 2, C64::from_polar(1.0, -w * s))]
                        }
                    } else {
                        // Same column: combined multiplier of all
                        // representatives.
                        let mult: C64 = reps
                            .iter()
                            .map(|&(s, wt)| {
                                if k == 0 {
                                    C64::new(wt * (w * s).cos(), 0.0)
                                } else {
                                    C64::from_polar(wt, w * s)
                                }
                            })
                            .sum();
                        if mult.norm() < 1e-9 {
                            vec![]
                        } else {
                            vec![(k, mult.inv())]
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut c = vec![C64::new(0.0, 0.0); g.n_pos()];
    for (kx, cv) in c.iter_mut().enumerate() {
        let km = decode(kx, n, d);
        let mut acc = C64::new(0.0, 0.0);
        if d == 1 {
            for &(i0, w0) in &axis_rules[0][km[0]] {
                acc += b[i0] * w0;
            }
        } else {
            for &(i0, w0) in &axis_rules[0][km[0]] {
                for &(i1, w1) in &axis_rules[1][km[1]] {
                    acc += b[i0 * m + i1] * w0 * w1;
                }
            }
        }
        // b = (M-DFT of samples)/M equals c/N^d per mode.
        *cv = acc * inv_m * (n.pow(d as u32)) as f64;
    }
    // Back to symbol-grid samples: (1/N^d) inverse DFT.
    for a in 0..d {
        centered_dft_axis(&mut c, n, d, a, 1);
    }
    let inv_n = 1.0 / (n.pow(d as u32)) as f64;
    c.iter_mut().for_each(|v| *v *= inv_n);
    c
}

/// Magnetic dequantization: the symbol `f` with `quantize(f) = K`.
pub fn dequantize(k: &OperatorKernel, a: &VectorPotential) -> Result<SymbolField> {
    let g = k.grid;
    check_potential(&g, a)?;
    if a.label() != k.gauge {
        return domain(format!(
            "kernel was built in gauge `{}`, dequantizing in `{}`",
            k.gauge,
            a.label()
        ));
    }
    let h = k.hilbert;
    let params = k.params;
    let d = g.dim;
    let n = g.n;
    let np = g.n_pos();
    let chans: Vec<Vec<C64>> = (0..np)
        .into_par_iter()
        .map(|ch| {
            let ci = decode(ch, n, d);
            let mut r = [0i64; 2];
            for a_ in 0..d {
                r[a_] = ci[a_] as i64 - (n / 2) as i64;
            }
            let reps = channel_reps(r, d, n);
            if h.m > n {
                // Sum the estimates of every micro offset in the alias
                // class of the channel: exactly the content seen by the
                // momentum samples.
                let mut acc = vec![C64::new(0.0, 0.0); np];
                for (off, w) in alias_offsets(r, d, n, h.m) {
                    let u = offset_coords(off, d, h.spacing);
                    let ph = row_phases(a, &params, &h, &u[..d]);
                    let vals: Vec<C64> = (0..h.size())
                        .map(|i| k.matrix[(i, column_of(i, off, &h))] * ph[i].conj() * w)
                        .collect();
                    let mut shift = [0.0; 2];
                    for ax in 0..d {
                        shift[ax] = 0.5 * h.eps * u[ax];
                    }
                    let est = resample_channel(&vals, &g, &h, &shift);
                    for (s, e) in acc.iter_mut().zip(est) {
                        *s += e;
                    }
                }
                acc
            } else {
                // All representatives share one column per row.
                let rep0 = reps[0];
                let u0 = offset_coords(rep0.offset, d, h.spacing);
                let ph = row_phases(a, &params, &h, &u0[..d]);
                let vals: Vec<C64> = (0..h.size())
                    .map(|i| k.matrix[(i, column_of(i, rep0.offset, &h))] * ph[i].conj())
                    .collect();
                let half = (n / 2) as i64;
                let shifts: Vec<Vec<(f64, f64)>> = (0..d)
                    .map(|ax| {
                        if r[ax] == -half {
                            let s = 0.5 * h.eps * half as f64 * h.spacing;
                            vec![(-s, 0.5), (s, 0.5)]
                        } else {
                            vec![(0.5 * h.eps * r[ax] as f64 * h.spacing, 1.0)]
                        }
                    })
                    .collect();
                recover_channel(&vals, &g, &h, &shifts)
            }
        })
        .collect();
    // f(X, ξ) = (2π)^{-d/2} Δ^d Σ_u exp(iuξ) F₂f(X, u).
    let mut vals = vec![C64::new(0.0, 0.0); g.n_phase()];
    for (ch, col) in chans.iter().enumerate() {
        for (x, v) in col.iter().enumerate() {
            vals[x * np + ch] = *v;
        }
    }
    let nd = 2 * d;
    for ax in d..nd {
        centered_dft_axis(&mut vals, n, nd, ax, 1);
    }
    let c = (2.0 * PI).powf(-(d as f64) / 2.0) * g.dx().powi(d as i32);
    vals.iter_mut().for_each(|v| *v *= c);
    SymbolField::from_values(g, vals)
}

/// The symbol grid matching a Hilbert grid.
pub fn symbol_grid_of(h: &HilbertGrid) -> Result<GridSpec> {
    GridSpec::new(h.dim, h.n, h.n as f64 * h.spacing)
}

/// Magnetic Wigner transform `W(u, v)`: the phase-space function dual to
/// [`quantize`] under the pairing
/// `⟨v, Op^A(f) u⟩ = (2πε)^{-d} Σ_{X,ξ} f W(u, v) ΔX^d Δξ^d`,
/// which holds exactly for every symbol on the grid.  It is the
/// transpose of the quantization map evaluated on `v̄ ⊗ u`; the phase
/// `exp(+iλΓ)` enters through the kernel phase.
pub fn wigner(u: &WaveFunction, v: &WaveFunction, a: &VectorPotential, params: &Parameters) -> Result<SymbolField> {
    if u.grid != v.grid {
        return domain("wave functions live on different grids");
    }
    let h = u.grid;
    if (h.eps - params.eps).abs() > 1e-15 {
        return domain("wave-function grid and parameters use different epsilon");
    }
    let g = symbol_grid_of(&h)?;
    check_potential(&g, a)?;
    let d = g.dim;
    let n = g.n;
    let np = g.n_pos();
    let wgt = OperatorKernel::weight(&h);
    // D[kx][ch]: dual of the channel spectra.
    let cols: Vec<Vec<C64>> = (0..np)
        .into_par_iter()
        .map(|ch| {
            let ci = decode(ch, n, d);
            let mut r = [0i64; 2];
            for a_ in 0..d {
                r[a_] = ci[a_] as i64 - (n / 2) as i64;
            }
            let mut acc = vec![C64::new(0.0, 0.0); np];
            for rep in channel_reps(r, d, n) {
                let uo = offset_coords(rep.offset, d, h.spacing);
                let ph = row_phases(a, params, &h, &uo[..d]);
                let rho: Vec<C64> = (0..h.size())
                    .map(|i| v.values[i].conj() * u.values[column_of(i, rep.offset, &h)] * ph[i] * (rep.weight * wgt))
                    .collect();
                let dual = interpolate_channel_transpose(&rho, &g, &h, &uo);
                for (s, e) in acc.iter_mut().zip(dual) {
                    *s += e;
                }
            }
            acc
        })
        .collect();
    let mut vals = vec![C64::new(0.0, 0.0); g.n_phase()];
    for (ch, col) in cols.iter().enumerate() {
        for (kx, v) in col.iter().enumerate() {
            vals[kx * np + ch] = *v;
        }
    }
    let nd = 2 * d;
    for ax in 0..nd {
        centered_dft_axis(&mut vals, n, nd, ax, -1);
    }
    let c2 = (2.0 * PI).powf(-(d as f64) / 2.0) * g.dxi().powi(d as i32);
    // `h.weight()` is the quadrature weight of the inner product `⟨v, ·⟩`.
    let c = c2 * (2.0 * PI * params.eps).powi(d as i32) * h.weight() / g.cell();
    vals.iter_mut().for_each(|v| *v *= c);
    SymbolField::from_values(g, vals)
}

/// Direct expectation value `⟨v, Op^A(f) u⟩`.
pub fn expectation(f: &SymbolField, u: &WaveFunction, v: &WaveFunction, a: &VectorPotential, params: &Parameters) -> Result<C64> {
    let k = quantize(f, a, params)?;
    let ku = k.apply(u)?;
    Ok(v.inner(&ku))
}

/// Expectation value as the phase-space average
/// `(2πε)^{-d} ∫ f W(u, v) dX dξ`.
pub fn expectation_via_wigner(f: &SymbolField, u: &WaveFunction, v: &WaveFunction, a: &VectorPotential, params: &Parameters) -> Result<C64> {
    let w = wigner(u, v, a, params)?;
    if w.grid != f.grid {
        return domain("symbol and wave-function grids disagree");
    }
    let s: C64 = f.values.iter().zip(&w.values).map(|(x, y)| x * y).sum();
    Ok(s * f.grid.cell() / (2.0 * PI * params.eps).powi(f.grid.dim as i32))
}

/// Diagonal of the gauge unitary `(U_χ u)(x) = exp(iλ χ(εx)/ε) u(x)`,
/// which satisfies `quantize(f, A + ∇χ) = U_χ quantize(f, A) U_χ†`.
pub fn gauge_unitary(chi: &ScalarField, params: &Parameters, h: &HilbertGrid) -> Vec<C64> {
    (0..h.size())
        .map(|i| {
            let x = h.coords(i);
            let mut ex = [0.0; 2];
            for a in 0..h.dim {
                ex[a] = params.eps * x[a];
            }
            C64::from_polar(1.0, params.lambda * chi.eval(&ex[..h.dim]) / params.eps)
        })
        .collect()
}

/// `U K U†` for a diagonal unitary `U`.
pub fn conjugate_diagonal(k: &OperatorKernel, diag: &[C64], gauge: impl Into<String>) -> OperatorKernel {
    let n = k.matrix.nrows();
    let m = CMatrix::from_fn(n, n, |i, j| diag[i] * k.matrix[(i, j)] * diag[j].conj());
    OperatorKernel {
        matrix: m,
        gauge: gauge.into(),
        ..k.clone()
    }
}

/// The norm bound `(2π)^{-d} ‖F_σ f‖_{L¹}` (discrete).
pub fn norm_bound(f: &SymbolField) -> f64 {
    let fs = symplectic_fourier(f);
    let l1: f64 = fs.values.iter().map(|v| v.norm()).sum::<f64>() * f.grid.cell();
    l1 / (2.0 * PI).powi(f.grid.dim as i32)
}

/// Applies the Weyl system `W(Y)` with `Y = (y, η)` to `u`.
///
/// `y` is a microscopic translation and must be a multiple of the grid
/// spacing (within a relative tolerance of `1e-9`).
pub fn weyl_system_apply(
    y: &[f64],
    eta: &[f64],
    a: &VectorPotential,
    params: &Parameters,
    u: &WaveFunction,
) -> Result<WaveFunction> {
    let h = u.grid;
    let d = h.dim;
    if y.len() != d || eta.len() != d || a.dim() != d {
        return domain("Weyl-system arguments have the wrong dimension");
    }
    let mut off = [0i64; 2];
    for k in 0..d {
        let q = y[k] / h.spacing;
        let r = q.round();
        if (q - r).abs() > 1e-9 * q.abs().max(1.0) {
            return Err(Error::Domain(format!(
                "translation {} is not a multiple of the grid spacing {}",
                y[k], h.spacing
            )));
        }
        off[k] = r as i64;
    }
    let vals: Vec<C64> = (0..h.size())
        .into_par_iter()
        .map(|i| {
            let x = h.coords(i);
            let mut xy = [0.0; 2];
            let mut mom = 0.0;
            for k in 0..d {
                xy[k] = x[k] + y[k];
                mom += eta[k] * (x[k] + 0.5 * y[k]);
            }
            let mag = if params.lambda == 0.0 {
                0.0
            } else {
                params.lambda * scaled_circulation(a, params.eps, &x[..d], &xy[..d])
            };
            let j = column_of(i, off, &h);
            C64::from_polar(1.0, -mag - params.eps * mom) * u.values[j]
        })
        .collect();
    WaveFunction::new(h, vals)
}

/// The pointwise phase relating `W(X) W(Y)` to `W(X + Y)` at the
/// microscopic point `x`: `exp(iε σ(X, Y)/2) ω(εx; x_X, y_Y)`.
pub fn weyl_composition_phase(
    x_tr: &[f64],
    xi: &[f64],
    y_tr: &[f64],
    eta: &[f64],
    a: &VectorPotential,
    params: &Parameters,
    point: &[f64],
) -> C64 {
    let d = a.dim();
    let mut sigma = 0.0;
    let mut q = [0.0; 2];
    for k in 0..d {
        sigma += xi[k] * y_tr[k] - x_tr[k] * eta[k];
        q[k] = params.eps * point[k];
    }
    C64::from_polar(1.0, 0.5 * params.eps * sigma) * omega_phase(a, &q[..d], x_tr, y_tr, params)
}
