//! Bloch electrons in slowly varying electromagnetic fields.
//!
//! A particle in a lattice-periodic potential `V_Γ` is decomposed over the
//! Brillouin zone by the Zak transform; each fiber carries the Bloch
//! Hamiltonian `H(k) = ½(−i∇_y + k)² + V_Γ` on the unit cell, diagonalised
//! here in a truncated plane-wave basis.  The geometry of an isolated band
//! (Berry connection, curvature, Rammal–Wilkinson term) enters the
//! first-order effective Hamiltonian and the ε-modified semiclassical flow.
//!
//! # Conventions
//!
//! * **Lattice.**  Basis vectors `e_j` (rows), dual vectors `e*_j` with
//!   `e_j·e*_k = 2πδ_jk`.  Points of Γ* are labelled by integer vectors
//!   `n`, `γ*_n = Σ n_j e*_j`.
//! * **Brillouin zone grid.**  `R^d` points in reduced coordinates
//!   `θ_j = (m_j − ⌊R/2⌋)/R`, `k = Σ θ_j e*_j`.  The grid is periodic and
//!   contains `k = 0`; for odd `R` it avoids the zone boundary, where free
//!   bands cross.
//! * **Plane waves.**  Bloch functions are stored through their periodic
//!   part `u_k(y) = Σ_n c_n e^{iγ*_n·y}` over the box `|n_j| ≤ G` of
//!   `(2G+1)^d` dual points.  The basis is `k`-independent, so all
//!   `k`-dependence of `H(k) = ½|k + γ*_n|² δ + V̂(γ*_n − γ*_m)` is explicit
//!   and `∂_{k_l} H = diag((k + γ*_n)_l)` is used analytically.
//! * **Equivariance.**  `u_{k+γ*_s}` has coefficients `c_{n+s}(k)`; links
//!   that cross the zone boundary use this continuation, so Wilson loops
//!   close on the torus.
//! * **Gauge.**  Each eigenvector is rotated so its largest-magnitude
//!   coefficient is real and positive (the only convention; 𝒜 depends on
//!   it, every other derived quantity does not).
//!
//! # Geometric quantities (one band `b`)
//!
//! * **Connection** `𝒜_l = i⟨u|∂_{k_l} u⟩` by central differences of the
//!   gauge-fixed vectors along the reduced directions.
//! * **Curvature** `Ω_12 = ∂_1𝒜_2 − ∂_2𝒜_1` from plaquette Wilson loops:
//!   the phase of the product of normalised link overlaps around each
//!   plaquette, with sign chosen so that `Ω ≈ ∮𝒜/area`, divided by the
//!   signed plaquette area.  Curvature samples live at plaquette centres;
//!   their sum is `2π` times an integer (the Chern number) by construction.
//! * **Rammal–Wilkinson** `M_lj = Re[(i/2)⟨∂_lu|(H − E)|∂_ju⟩]`, evaluated
//!   by the gauge-invariant sum over states
//!   `⟨∂_lu|(H − E)|∂_ju⟩ = Σ_{m≠b} ⟨b|∂_lH|m⟩⟨m|∂_jH|b⟩/(E_m − E_b)`.
//!
//! # Effective dynamics
//!
//! `h0 = E_b(k) + φ(r)`,
//! `h1 = −(−∂_{r_l}φ + λB_lj ∂_{k_j}E_b) 𝒜_l − λB_lj M_lj` and
//! `h_sc = E_b + φ − ελ B·M` with `B·M = Σ_lj B_lj M_lj`.  The flow solves
//! `λB ṙ − k̇ = ∇_r h_sc`, `ṙ + εΩ k̇ = ∇_k h_sc` for `(ṙ, k̇)` at every
//! stage.  Off the grid, `E_b`, `∇_k E_b` (Hellmann–Feynman) and `M` are
//! evaluated by diagonalising the fiber at the wrapped `k`, so the band is
//! exact inside the zone rather than interpolated across the kinks of
//! folded bands; Ω is the trigonometric interpolant of the plaquette
//! samples.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::expr::{position_names, ScalarField};
use crate::geometry::{MagneticField, Parameters};
use crate::grid::{decode, encode};
use crate::linalg::{hermitian_eig, CMatrix};
use crate::semiclassics::{PhaseSpaceHamiltonian, Trajectory};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Relative tolerance of the duality relation `e_j·e*_k = 2πδ_jk`.
pub const DUALITY_TOLERANCE: f64 = 1e-12;

/// Default gap tolerance relative to the selected band's width.
pub const DEFAULT_GAP_FRACTION: f64 = 1e-3;

/// Smallest admissible modulus of a link overlap `⟨u_k|u_k'⟩` between
/// neighbouring grid points; smaller values signal a band crossing
/// between the points.
pub const LINK_TOLERANCE: f64 = 1e-6;

/// Smallest admissible `|1 + ελ B_12 Ω_12|` in the macroscopic flow.
pub const SINGULARITY_TOLERANCE: f64 = 1e-8;

/// A Bravais lattice Γ with its dual Γ* and a Brillouin-zone grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    basis: [[f64; 2]; 2],
    dual: [[f64; 2]; 2],
    resolution: usize,
}

impl Lattice {
    /// A lattice from its basis vectors (one vector per row) and the
    /// number of Brillouin-zone grid points per reduced axis.
    pub fn new(basis: &[Vec<f64>], resolution: usize) -> Result<Self> {
        let dim = basis.len();
        if !(1..=2).contains(&dim) {
            return domain(format!("lattice dimension must be 1 or 2, got {dim}"));
        }
        if basis.iter().any(|v| v.len() != dim || v.iter().any(|c| !c.is_finite())) {
            return domain("lattice vectors must be finite and have the lattice dimension");
        }
        if resolution < 2 {
            return domain(format!("Brillouin-zone resolution must be at least 2, got {resolution}"));
        }
        let mut e = [[0.0; 2]; 2];
        for (j, v) in basis.iter().enumerate() {
            e[j][..dim].copy_from_slice(v);
        }
        let mut dual = [[0.0; 2]; 2];
        if dim == 1 {
            if e[0][0] == 0.0 {
                return domain("lattice vector must be non-zero");
            }
            dual[0][0] = TWO_PI / e[0][0];
        } else {
            let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
            let scale = e[0][0].hypot(e[0][1]) * e[1][0].hypot(e[1][1]);
            if det.abs() <= 1e-12 * scale || scale == 0.0 {
                return domain("lattice vectors are linearly dependent");
            }
            // e* = 2π (E^{-1})^T with E holding the basis as rows.
            dual[0] = [TWO_PI * e[1][1] / det, -TWO_PI * e[1][0] / det];
            dual[1] = [-TWO_PI * e[0][1] / det, TWO_PI * e[0][0] / det];
        }
        let lat = Self {
            dim,
            basis: e,
            dual,
            resolution,
        };
        let defect = lat.duality_defect();
        if defect > DUALITY_TOLERANCE {
            return Err(Error::Numerical(format!("duality relation violated by {defect:e}")));
        }
        Ok(lat)
    }

    /// The square (or one-dimensional) lattice of spacing `a`.
    pub fn square(dim: usize, a: f64, resolution: usize) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return domain(format!("lattice spacing must be positive, got {a}"));
        }
        let basis: Vec<Vec<f64>> = (0..dim)
            .map(|j| (0..dim).map(|l| if l == j { a } else { 0.0 }).collect())
            .collect();
        Self::new(&basis, resolution)
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Basis vector `e_j`.
    pub fn basis(&self, j: usize) -> &[f64] {
        &self.basis[j][..self.dim]
    }

    /// Dual basis vector `e*_j`.
    pub fn dual(&self, j: usize) -> &[f64] {
        &self.dual[j][..self.dim]
    }

    /// Brillouin-zone grid points per reduced axis `R`.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of Brillouin-zone grid points `R^d`.
    pub fn n_k(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    /// `max_jk |e_j·e*_k − 2πδ_jk| / 2π`.
    pub fn duality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.dim {
            for k in 0..self.dim {
                let dot: f64 = (0..self.dim).map(|l| self.basis[j][l] * self.dual[k][l]).sum();
                let target = if j == k { TWO_PI } else { 0.0 };
                worst = worst.max((dot - target).abs() / TWO_PI);
            }
        }
        worst
    }

    /// Unit-cell volume `|det e|`.
    pub fn cell_volume(&self) -> f64 {
        det(&self.basis, self.dim).abs()
    }

    /// Brillouin-zone volume `|det e*| = (2π)^d / cell volume`.
    pub fn bz_volume(&self) -> f64 {
        det(&self.dual, self.dim).abs()
    }

    /// Reduced coordinates of grid point `ik`.
    pub fn reduced(&self, ik: usize) -> [f64; 2] {
        let r = self.resolution;
        let m = decode(ik, r, self.dim);
        let mut theta = [0.0; 2];
        for j in 0..self.dim {
            theta[j] = (m[j] as f64 - (r / 2) as f64) / r as f64;
        }
        theta
    }

    /// Cartesian `k` of grid point `ik`.
    pub fn k_point(&self, ik: usize) -> [f64; 2] {
        self.to_cartesian(&self.reduced(ik))
    }

    /// `k = Σ θ_j e*_j`.
    pub fn to_cartesian(&self, theta: &[f64]) -> [f64; 2] {
        let mut k = [0.0; 2];
        for j in 0..self.dim {
            for l in 0..self.dim {
                k[l] += theta[j] * self.dual[j][l];
            }
        }
        k
    }

    /// `θ_j = k·e_j / 2π`.
    pub fn to_reduced(&self, k: &[f64]) -> [f64; 2] {
        let mut theta = [0.0; 2];
        for j in 0..self.dim {
            theta[j] = (0..self.dim).map(|l| k[l] * self.basis[j][l]).sum::<f64>() / TWO_PI;
        }
        theta
    }

    /// Folds `k` into the zone `θ_j ∈ [−½, ½)`; also returns the integer
    /// shift `s` with `k = k_folded + Σ s_j e*_j`.
    pub fn fold(&self, k: &[f64]) -> ([f64; 2], [i32; 2]) {
        let theta = self.to_reduced(k);
        let mut folded = [0.0; 2];
        let mut shift = [0i32; 2];
        for j in 0..self.dim {
            let s = (theta[j] + 0.5).floor();
            folded[j] = theta[j] - s;
            shift[j] = s as i32;
        }
        (self.to_cartesian(&folded), shift)
    }

    /// `γ*_n = Σ n_j e*_j`.
    pub fn dual_point(&self, n: &[i32; 2]) -> [f64; 2] {
        let theta = [n[0] as f64, n[1] as f64];
        self.to_cartesian(&theta)
    }

    /// Lattice position `Σ s_j e_j` for reduced coordinates `s`.
    pub fn position(&self, s: &[f64]) -> [f64; 2] {
        let mut r = [0.0; 2];
        for j in 0..self.dim {
            for l in 0..self.dim {
                r[l] += s[j] * self.basis[j][l];
            }
        }
        r
    }

    /// Grid neighbour of `ik` displaced by `offset` reduced steps, and the
    /// dual-lattice shift `s` such that the displaced point equals
    /// `k(neighbour) + Σ s_j e*_j`.
    pub fn neighbour(&self, ik: usize, offset: [i32; 2]) -> (usize, [i32; 2]) {
        let r = self.resolution as i32;
        let m = decode(ik, self.resolution, self.dim);
        let mut idx = [0usize; 2];
        let mut shift = [0i32; 2];
        for j in 0..self.dim {
            let raw = m[j] as i32 + offset[j];
            let wrapped = raw.rem_euclid(r);
            shift[j] = (raw - wrapped) / r;
            idx[j] = wrapped as usize;
        }
        (encode(&idx[..self.dim], self.resolution), shift)
    }

    /// Reduced coordinates of the centre of plaquette `ip` (the plaquette
    /// spanned by grid point `ip` and its positive neighbours).
    pub fn plaquette_centre(&self, ip: usize) -> [f64; 2] {
        let mut theta = self.reduced(ip);
        for t in theta.iter_mut().take(self.dim) {
            *t += 0.5 / self.resolution as f64;
        }
        theta
    }

    /// Index of the plaquette centred at minus the centre of `ip`
    /// (modulo the lattice).
    pub fn opposite_plaquette(&self, ip: usize) -> usize {
        let r = self.resolution;
        let f = r / 2;
        let m = decode(ip, r, self.dim);
        let mut idx = [0usize; 2];
        for j in 0..self.dim {
            idx[j] = ((2 * f + 2 * r - m[j] - 1) % r) as usize;
        }
        encode(&idx[..self.dim], r)
    }
}

fn det(m: &[[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        m[0][0]
    } else {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// A Fourier coefficient `V̂(γ*_n)` of a periodic potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialCoefficient {
    /// Integer label `n` of `γ*_n` (second entry 0 in one dimension).
    pub index: [i32; 2],
    /// The coefficient.
    pub value: C64,
}

/// A Γ-periodic potential `V(y) = Σ_n V̂(γ*_n) e^{iγ*_n·y}` with finitely
/// many coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPotential {
    dim: usize,
    coefficients: BTreeMap<[i32; 2], C64>,
    real: bool,
}

impl PeriodicPotential {
    /// The zero potential.
    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(dim, &[], true)
    }

    /// A potential from its coefficient table.  Repeated indices add.  With
    /// `real` set the table must satisfy `V̂(−γ*) = conj V̂(γ*)` (to 1e−14).
    pub fn new(dim: usize, entries: &[PotentialCoefficient], real: bool) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return domain(format!("potential dimension must be 1 or 2, got {dim}"));
        }
        let mut coefficients = BTreeMap::new();
        for e in entries {
            if dim == 1 && e.index[1] != 0 {
                return domain(format!("one-dimensional potential has index {:?}", e.index));
            }
            if !(e.value.re.is_finite() && e.value.im.is_finite()) {
                return domain(format!("non-finite potential coefficient at {:?}", e.index));
            }
            *coefficients.entry(e.index).or_insert(C64::new(0.0, 0.0)) += e.value;
        }
        let pot = Self {
            dim,
            coefficients,
            real,
        };
        if real {
            for (n, v) in &pot.coefficients {
                let partner = pot.coefficient(&[-n[0], -n[1]]);
                if (partner - v.conj()).norm() > 1e-14 * v.norm().max(1.0) {
                    return domain(format!(
                        "real potential needs V̂(−γ*) = conj V̂(γ*); violated at {n:?}"
                    ));
                }
            }
        }
        Ok(pot)
    }

    /// Real potential `Σ a cos(γ*_n·y + φ)` from `(n, a, φ)` triples.
    pub fn cosines(dim: usize, terms: &[([i32; 2], f64, f64)]) -> Result<Self> {
        let mut entries = Vec::new();
        for &(n, a, phase) in terms {
            if n == [0, 0] {
                entries.push(PotentialCoefficient {
                    index: n,
                    value: C64::new(a * phase.cos(), 0.0),
                });
                continue;
            }
            let half = C64::from_polar(0.5 * a, phase);
            entries.push(PotentialCoefficient { index: n, value: half });
            entries.push(PotentialCoefficient {
                index: [-n[0], -n[1]],
                value: half.conj(),
            });
        }
        Self::new(dim, &entries, true)
    }

    /// The one-dimensional Mathieu potential `V̂(±e*) = v`, i.e. `2v cos(e*·y)`.
    pub fn mathieu(v: f64) -> Result<Self> {
        Self::cosines(1, &[([1, 0], 2.0 * v, 0.0)])
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether the potential is declared real-valued.
    pub fn is_real(&self) -> bool {
        self.real
    }

    /// `V̂(γ*_n)` (zero outside the table).
    pub fn coefficient(&self, n: &[i32; 2]) -> C64 {
        self.coefficients.get(n).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    /// The coefficient table.
    pub fn entries(&self) -> Vec<PotentialCoefficient> {
        self.coefficients
            .iter()
            .map(|(&index, &value)| PotentialCoefficient { index, value })
            .collect()
    }

    /// `max |n_j|` over the table.
    pub fn max_index(&self) -> i32 {
        self.coefficients
            .keys()
            .map(|n| n[0].abs().max(n[1].abs()))
            .max()
            .unwrap_or(0)
    }

    /// `V(y)`.
    pub fn eval(&self, lat: &Lattice, y: &[f64]) -> C64 {
        self.coefficients
            .iter()
            .map(|(n, v)| {
                let g = lat.dual_point(n);
                let phase: f64 = (0..self.dim).map(|l| g[l] * y[l]).sum();
                v * C64::from_polar(1.0, phase)
            })
            .sum()
    }

    /// Whether `V(−y) = V(y)` (inversion symmetry about the origin).
    pub fn is_inversion_symmetric(&self) -> bool {
        self.coefficients
            .iter()
            .all(|(n, v)| (self.coefficient(&[-n[0], -n[1]]) - v).norm() <= 1e-14 * v.norm().max(1.0))
    }
}

/// The plane-wave box `|n_j| ≤ G` and its index map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneWaveBasis {
    dim: usize,
    cutoff: usize,
    indices: Vec<[i32; 2]>,
}

impl PlaneWaveBasis {
    /// The box of cutoff `G ≥ 1` in dimension `dim`.
    pub fn new(dim: usize, cutoff: usize) -> Result<Self> {
        if cutoff < 1 {
            return domain("plane-wave cutoff must be at least 1");
        }
        if !(1..=2).contains(&dim) {
            return domain(format!("plane-wave dimension must be 1 or 2, got {dim}"));
        }
        let side = 2 * cutoff + 1;
        let g = cutoff as i32;
        let indices = (0..side.pow(dim as u32))
            .map(|flat| {
                let m = decode(flat, side, dim);
                let mut n = [0i32; 2];
                for j in 0..dim {
                    n[j] = m[j] as i32 - g;
                }
                n
            })
            .collect();
        Ok(Self { dim, cutoff, indices })
    }

    /// Number of plane waves `(2G+1)^d`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Always `false` (the box contains at least `γ* = 0`).
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The cutoff `G`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Integer labels of the basis, in storage order.
    pub fn indices(&self) -> &[[i32; 2]] {
        &self.indices
    }

    /// Storage position of label `n`, if inside the box.
    pub fn position_of(&self, n: &[i32; 2]) -> Option<usize> {
        let g = self.cutoff as i32;
        let side = 2 * self.cutoff + 1;
        let mut idx = [0usize; 2];
        for j in 0..self.dim {
            if n[j].abs() > g {
                return None;
            }
            idx[j] = (n[j] + g) as usize;
        }
        if self.dim == 1 && n[1] != 0 {
            return None;
        }
        Some(encode(&idx[..self.dim], side))
    }

    /// Coefficients of `u_{k+γ*_s}` given those of `u_k`: `c'_n = c_{n+s}`
    /// (zero where `n + s` leaves the box).
    pub fn continue_by(&self, c: &[C64], shift: [i32; 2]) -> Vec<C64> {
        if shift == [0, 0] {
            return c.to_vec();
        }
        self.indices
            .iter()
            .map(|n| {
                self.position_of(&[n[0] + shift[0], n[1] + shift[1]])
                    .map_or(C64::new(0.0, 0.0), |p| c[p])
            })
            .collect()
    }
}

fn check_compatible(lat: &Lattice, v: &PeriodicPotential) -> Result<()> {
    if lat.dim() != v.dim() {
        return domain(format!(
            "lattice dimension {} does not match potential dimension {}",
            lat.dim(),
            v.dim()
        ));
    }
    Ok(())
}

/// The fiber Hamiltonian `H(k)_{nm} = ½|k + γ*_n|² δ_nm + V̂(γ*_n − γ*_m)`
/// over the plane-wave box of cutoff `G`.
pub fn fiber_hamiltonian(k: &[f64], v: &PeriodicPotential, lat: &Lattice, cutoff: usize) -> Result<CMatrix> {
    check_compatible(lat, v)?;
    if k.len() != lat.dim() {
        return domain("k-point has the wrong dimension");
    }
    let basis = PlaneWaveBasis::new(lat.dim(), cutoff)?;
    Ok(fiber_matrix(k, v, lat, &basis))
}

fn fiber_matrix(k: &[f64], v: &PeriodicPotential, lat: &Lattice, basis: &PlaneWaveBasis) -> CMatrix {
    let n = basis.len();
    let idx = basis.indices();
    let mut h = CMatrix::zeros(n, n);
    for a in 0..n {
        let g = lat.dual_point(&idx[a]);
        let kin: f64 = (0..lat.dim()).map(|l| (k[l] + g[l]).powi(2)).sum::<f64>() * 0.5;
        h[(a, a)] += C64::new(kin, 0.0);
        for b in 0..n {
            let diff = [idx[a][0] - idx[b][0], idx[a][1] - idx[b][1]];
            let c = v.coefficient(&diff);
            if c != C64::new(0.0, 0.0) {
                h[(a, b)] += c;
            }
        }
    }
    h
}

/// Full eigen-decomposition of the fiber at `k`.
/// A diagonal fiber (the free particle) is resolved without the solver,
/// so folded free bands and their unit eigenvectors are exact.
fn fiber_eig(k: &[f64], v: &PeriodicPotential, lat: &Lattice, basis: &PlaneWaveBasis) -> Result<(Vec<f64>, CMatrix)> {
    let h = fiber_matrix(k, v, lat, basis);
    let n = h.nrows();
    let diagonal = (0..n).all(|a| (0..n).all(|b| a == b || h[(a, b)] == C64::new(0.0, 0.0)));
    if !diagonal {
        return hermitian_eig(&h);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| h[(a, a)].re.total_cmp(&h[(b, b)].re));
    let mut vecs = CMatrix::zeros(n, n);
    for (c, &a) in order.iter().enumerate() {
        vecs[(a, c)] = C64::new(1.0, 0.0);
    }
    Ok((order.iter().map(|&a| h[(a, a)].re).collect(), vecs))
}

/// Rotates `col` so that its largest-magnitude entry is real positive and
/// returns the position of that entry.
fn fix_gauge(col: &mut [C64]) -> usize {
    let mut pivot = 0;
    let mut best = -1.0;
    for (i, c) in col.iter().enumerate() {
        // A tiny relative margin keeps the pivot choice stable under
        // roundoff when two entries tie.
        if c.norm() > best * (1.0 + 1e-12) {
            best = c.norm();
            pivot = i;
        }
    }
    if best > 0.0 {
        let phase = col[pivot].conj() / col[pivot].norm();
        for c in col.iter_mut() {
            *c *= phase;
        }
        col[pivot] = C64::new(col[pivot].norm(), 0.0);
    }
    pivot
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// The gauge-fixing record of one k-point: per band, the plane-wave
/// position whose coefficient was made real positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaugeRecord {
    /// Pivot position per band.
    pub pivots: Vec<usize>,
}

/// Bands of a periodic potential over the Brillouin-zone grid.
#[derive(Debug, Clone)]
pub struct BlochSolution {
    /// The lattice (and grid).
    pub lattice: Lattice,
    /// The potential.
    pub potential: PeriodicPotential,
    /// The plane-wave basis.
    pub basis: PlaneWaveBasis,
    /// Number of stored bands.
    pub n_bands: usize,
    /// `energies[ik][n]`, ascending in `n`.
    pub energies: Vec<Vec<f64>>,
    /// The first unstored band `E_{n_bands}(k)` (for gap checks of the top
    /// stored band; `+∞` when the basis is exhausted).
    pub next_band: Vec<f64>,
    /// Gauge-fixed unit eigenvectors: `vectors[ik]` is `basis × n_bands`.
    pub vectors: Vec<CMatrix>,
    /// Gauge-fixing record per k-point.
    pub gauge: Vec<GaugeRecord>,
}

/// Diagonalises the fiber Hamiltonian on every Brillouin-zone grid point
/// and keeps the lowest `n_bands` bands.
pub fn band_structure(v: &PeriodicPotential, lat: &Lattice, cutoff: usize, n_bands: usize) -> Result<BlochSolution> {
    check_compatible(lat, v)?;
    let basis = PlaneWaveBasis::new(lat.dim(), cutoff)?;
    if n_bands == 0 || n_bands > basis.len() {
        return domain(format!(
            "number of bands must lie in 1..={}, got {n_bands}",
            basis.len()
        ));
    }
    let results: Vec<Result<(Vec<f64>, f64, CMatrix, GaugeRecord)>> = (0..lat.n_k())
        .into_par_iter()
        .map(|ik| {
            let k = lat.k_point(ik);
            let (w, vecs) = fiber_eig(&k[..lat.dim()], v, lat, &basis)?;
            let mut out = CMatrix::zeros(basis.len(), n_bands);
            let mut pivots = Vec::with_capacity(n_bands);
            for b in 0..n_bands {
                let mut col: Vec<C64> = vecs.column(b).iter().copied().collect();
                pivots.push(fix_gauge(&mut col));
                out.set_column(b, &DVector::from_vec(col));
            }
            let next = w.get(n_bands).copied().unwrap_or(f64::INFINITY);
            Ok((w[..n_bands].to_vec(), next, out, GaugeRecord { pivots }))
        })
        .collect();
    let mut energies = Vec::with_capacity(lat.n_k());
    let mut next_band = Vec::with_capacity(lat.n_k());
    let mut vectors = Vec::with_capacity(lat.n_k());
    let mut gauge = Vec::with_capacity(lat.n_k());
    for r in results {
        let (e, nx, vec, g) = r?;
        energies.push(e);
        next_band.push(nx);
        vectors.push(vec);
        gauge.push(g);
    }
    Ok(BlochSolution {
        lattice: lat.clone(),
        potential: v.clone(),
        basis,
        n_bands,
        energies,
        next_band,
        vectors,
        gauge,
    })
}

impl BlochSolution {
    fn check_band(&self, band: usize) -> Result<()> {
        if band >= self.n_bands {
            return domain(format!("band {band} not stored (n_bands = {})", self.n_bands));
        }
        Ok(())
    }

    /// `E_band` over the grid.
    pub fn band(&self, band: usize) -> Result<Vec<f64>> {
        self.check_band(band)?;
        Ok(self.energies.iter().map(|e| e[band]).collect())
    }

    /// `max E_band − min E_band`.
    pub fn bandwidth(&self, band: usize) -> Result<f64> {
        let e = self.band(band)?;
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(hi - lo)
    }

    /// Default gap tolerance `δ_gap = 10⁻³ × bandwidth`.
    pub fn default_gap_tolerance(&self, band: usize) -> Result<f64> {
        Ok(DEFAULT_GAP_FRACTION * self.bandwidth(band)?)
    }

    /// Distance of `E_band(k)` to the neighbouring bands at grid point `ik`.
    pub fn gap_at(&self, band: usize, ik: usize) -> f64 {
        let e = &self.energies[ik];
        let above = if band + 1 < self.n_bands {
            e[band + 1]
        } else {
            self.next_band[ik]
        };
        let mut gap = above - e[band];
        if band > 0 {
            gap = gap.min(e[band] - e[band - 1]);
        }
        gap
    }

    /// Smallest gap of the band over the grid.
    pub fn min_gap(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        Ok((0..self.lattice.n_k())
            .map(|ik| self.gap_at(band, ik))
            .fold(f64::INFINITY, f64::min))
    }

    /// Grid points where the band comes closer than `delta` to a neighbour.
    pub fn gap_violations(&self, band: usize, delta: f64) -> Result<Vec<usize>> {
        self.check_band(band)?;
        Ok((0..self.lattice.n_k())
            .filter(|&ik| self.gap_at(band, ik) < delta)
            .collect())
    }

    /// Fails with the offending k-points unless the band is gapped by at
    /// least `delta` (default: [`Self::default_gap_tolerance`]).
    pub fn require_gap(&self, band: usize, delta: Option<f64>) -> Result<f64> {
        let delta = match delta {
            Some(d) => d,
            None => self.default_gap_tolerance(band)?,
        };
        let bad = self.gap_violations(band, delta)?;
        if !bad.is_empty() {
            let listed: Vec<String> = bad
                .iter()
                .take(12)
                .map(|&ik| {
                    let t = self.lattice.reduced(ik);
                    format!("θ=({:.4},{:.4})", t[0], t[1])
                })
                .collect();
            return Err(Error::Numerical(format!(
                "gap condition violated for band {band} (δ_gap = {delta:e}) at {} k-point(s): {}{}",
                bad.len(),
                listed.join(", "),
                if bad.len() > 12 { ", ..." } else { "" }
            )));
        }
        Ok(delta)
    }

    /// Largest change of `E_band` between adjacent grid points.
    pub fn max_adjacent_jump(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        let lat = &self.lattice;
        let mut worst: f64 = 0.0;
        for ik in 0..lat.n_k() {
            for j in 0..lat.dim() {
                let mut off = [0i32; 2];
                off[j] = 1;
                let (nb, _) = lat.neighbour(ik, off);
                worst = worst.max((self.energies[ik][band] - self.energies[nb][band]).abs());
            }
        }
        Ok(worst)
    }

    /// Gauge-fixed coefficients of band `band` at grid point `ik`,
    /// continued to `k + Σ s_j e*_j`.
    pub fn state(&self, ik: usize, band: usize, shift: [i32; 2]) -> Vec<C64> {
        let col: Vec<C64> = self.vectors[ik].column(band).iter().copied().collect();
        self.basis.continue_by(&col, shift)
    }

    /// `max |E_n(k + e*_j) − E_n(k)|` over the grid, the stored bands and
    /// each dual direction, with `k + e*_j` diagonalised afresh.
    pub fn periodicity_defect(&self) -> Result<f64> {
        let lat = &self.lattice;
        let worst = (0..lat.n_k())
            .into_par_iter()
            .map(|ik| -> Result<f64> {
                let k = lat.k_point(ik);
                let mut w: f64 = 0.0;
                for j in 0..lat.dim() {
                    let mut kk = k;
                    for l in 0..lat.dim() {
                        kk[l] += lat.dual(j)[l];
                    }
                    let (e, _) = fiber_eig(&kk[..lat.dim()], &self.potential, lat, &self.basis)?;
                    for b in 0..self.n_bands {
                        w = w.max((e[b] - self.energies[ik][b]).abs());
                    }
                }
                Ok(w)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    }
}

/// Largest difference of the lowest band between plane-wave cutoffs `G`
/// and `2G` over the grid.
pub fn cutoff_convergence(v: &PeriodicPotential, lat: &Lattice, cutoff: usize) -> Result<f64> {
    let coarse = band_structure(v, lat, cutoff, 1)?;
    let fine = band_structure(v, lat, 2 * cutoff, 1)?;
    Ok(coarse
        .energies
        .iter()
        .zip(&fine.energies)
        .map(|(a, b)| (a[0] - b[0]).abs())
        .fold(0.0, f64::max))
}

/// Quantities of one band at a single (arbitrary) k-point, from a fresh
/// diagonalisation of the fiber at the folded `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    /// `E_b(k)`.
    pub energy: f64,
    /// `∇_k E_b` (Hellmann–Feynman).
    pub gradient: [f64; 2],
    /// `Ω_12` by the sum over states (zero in one dimension).
    pub omega12: f64,
    /// `M_12` by the sum over states (zero in one dimension).
    pub m12: f64,
    /// Distance to the neighbouring levels.
    pub gap: f64,
}

/// Evaluates [`BandPoint`] for band `band` at `k`.
pub fn band_point(v: &PeriodicPotential, lat: &Lattice, basis: &PlaneWaveBasis, band: usize, k: &[f64]) -> Result<BandPoint> {
    let d = lat.dim();
    if band >= basis.len() {
        return domain(format!("band {band} exceeds the plane-wave basis"));
    }
    let (kf, _) = lat.fold(k);
    let (w, vecs) = fiber_eig(&kf[..d], v, lat, basis)?;
    let e = w[band];
    // Velocity matrices ∂_l H = diag(k + γ*_n)_l in the eigenbasis, column
    // `band` only.
    let idx = basis.indices();
    let kg: Vec<[f64; 2]> = idx
        .iter()
        .map(|n| {
            let g = lat.dual_point(n);
            [kf[0] + g[0], kf[1] + g[1]]
        })
        .collect();
    let cb: Vec<C64> = vecs.column(band).iter().copied().collect();
    let mut gradient = [0.0; 2];
    for l in 0..d {
        gradient[l] = cb.iter().zip(&kg).map(|(c, q)| c.norm_sqr() * q[l]).sum();
    }
    let mut gap = f64::INFINITY;
    if band + 1 < w.len() {
        gap = gap.min(w[band + 1] - e);
    }
    if band > 0 {
        gap = gap.min(e - w[band - 1]);
    }
    let (mut omega12, mut m12) = (0.0, 0.0);
    if d == 2 {
        let mut x_m = C64::new(0.0, 0.0);
        let mut x_o = C64::new(0.0, 0.0);
        for m in 0..w.len() {
            if m == band {
                continue;
            }
            let denom = w[m] - e;
            if denom.abs() < 1e-12 {
                return Err(Error::Numerical(format!(
                    "band {band} is degenerate at k = ({:.6}, {:.6})",
                    kf[0], kf[1]
                )));
            }
            let col = vecs.column(m);
            // ⟨b|∂_l H|m⟩
            let mut v1 = C64::new(0.0, 0.0);
            let mut v2 = C64::new(0.0, 0.0);
            for (p, q) in kg.iter().enumerate() {
                let t = cb[p].conj() * col[p];
                v1 += t * q[0];
                v2 += t * q[1];
            }
            let prod = v1 * v2.conj();
            x_m += prod / denom;
            x_o += prod / (denom * denom);
        }
        m12 = -0.5 * x_m.im;
        omega12 = -2.0 * x_o.im;
    }
    Ok(BandPoint {
        energy: e,
        gradient,
        omega12,
        m12,
        gap,
    })
}

/// Geometric data of one band on the Brillouin-zone grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryData {
    /// The band.
    pub band: usize,
    /// `𝒜_l(k)` at grid points (Cartesian components).
    pub connection: Vec<[f64; 2]>,
    /// `Ω_12` at plaquette centres (empty in one dimension).
    pub curvature: Vec<f64>,
    /// `M_lj(k)` at grid points.
    pub rammal_wilkinson: Vec<[[f64; 2]; 2]>,
    /// `∇_k E_b` at grid points (Hellmann–Feynman).
    pub velocity: Vec<[f64; 2]>,
    /// `Σ_p Ω_p·area_p / 2π` before rounding.
    pub chern_raw: f64,
    /// The integer Chern number.
    pub chern: i64,
    /// The gap tolerance that was enforced.
    pub gap_tolerance: f64,
}

impl BerryData {
    /// `Ω_lj` at plaquette `ip`.
    pub fn omega(&self, ip: usize, l: usize, j: usize) -> f64 {
        if self.curvature.is_empty() || l == j {
            return 0.0;
        }
        if l < j {
            self.curvature[ip]
        } else {
            -self.curvature[ip]
        }
    }

    /// `Σ_p Ω_p` times the plaquette area: `∫_BZ Ω_12 dk`.
    pub fn curvature_integral(&self, lat: &Lattice) -> f64 {
        let area = lat.bz_volume() / lat.n_k() as f64;
        self.curvature.iter().sum::<f64>() * area
    }

    /// `∫_BZ |Ω_12| dk`.
    pub fn curvature_abs_integral(&self, lat: &Lattice) -> f64 {
        let area = lat.bz_volume() / lat.n_k() as f64;
        self.curvature.iter().map(|o| o.abs()).sum::<f64>() * area
    }

    /// `max_p |Ω(p) + Ω(−p)|` on the plaquette grid.
    pub fn time_reversal_defect(&self, lat: &Lattice) -> f64 {
        (0..self.curvature.len())
            .map(|ip| (self.curvature[ip] + self.curvature[lat.opposite_plaquette(ip)]).abs())
            .fold(0.0, f64::max)
    }
}

/// Berry connection, plaquette curvature and Rammal–Wilkinson term of one
/// band.  Fails unless the band is gapped by `gap` (default
/// `10⁻³ × bandwidth`) on the whole grid.
pub fn berry_data(sol: &BlochSolution, band: usize, gap: Option<f64>) -> Result<BerryData> {
    let gap_tolerance = sol.require_gap(band, gap)?;
    let lat = &sol.lattice;
    let d = lat.dim();
    let h = 1.0 / lat.resolution() as f64;

    let link_error = |ik: usize, modulus: f64| {
        let t = lat.reduced(ik);
        Error::Numerical(format!(
            "gap condition violated for band {band} between grid points: link overlap {modulus:e} next to θ=({:.4},{:.4})",
            t[0], t[1]
        ))
    };
    let connection: Vec<[f64; 2]> = (0..lat.n_k())
        .into_par_iter()
        .map(|ik| -> Result<[f64; 2]> {
            let u = sol.state(ik, band, [0, 0]);
            let mut a_red = [0.0; 2];
            for j in 0..d {
                let mut off = [0i32; 2];
                off[j] = 1;
                let (ip, sp) = lat.neighbour(ik, off);
                off[j] = -1;
                let (im, sm) = lat.neighbour(ik, off);
                let (op, om) = (inner(&u, &sol.state(ip, band, sp)), inner(&u, &sol.state(im, band, sm)));
                let weakest = op.norm().min(om.norm());
                if weakest < LINK_TOLERANCE {
                    return Err(link_error(ik, weakest));
                }
                let diff = op - om;
                a_red[j] = -diff.im / (2.0 * h);
            }
            // ∂_{k_l} = Σ_j (e_j)_l / 2π ∂_{θ_j}.
            let mut a = [0.0; 2];
            for l in 0..d {
                a[l] = (0..d).map(|j| lat.basis(j)[l] * a_red[j]).sum::<f64>() / TWO_PI;
            }
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;

    let (curvature, chern_raw) = if d == 2 {
        let signed_area = det(&lat.dual, 2) * h * h;
        let phases: Vec<f64> = (0..lat.n_k())
            .into_par_iter()
            .map(|ik| -> Result<f64> {
                let corners = [[0, 0], [1, 0], [1, 1], [0, 1]];
                let states: Vec<Vec<C64>> = corners
                    .iter()
                    .map(|&off| {
                        let (ic, s) = lat.neighbour(ik, off);
                        sol.state(ic, band, s)
                    })
                    .collect();
                let mut prod = C64::new(1.0, 0.0);
                for c in 0..4 {
                    let link = inner(&states[c], &states[(c + 1) % 4]);
                    if link.norm() < LINK_TOLERANCE {
                        return Err(link_error(ik, link.norm()));
                    }
                    prod *= link / link.norm();
                }
                // arg ∏⟨u|u'⟩ ≈ −∮𝒜, so the flux is minus the phase.
                Ok(-prod.arg())
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = phases.iter().sum();
        (phases.iter().map(|f| f / signed_area).collect(), total / TWO_PI)
    } else {
        (Vec::new(), 0.0)
    };

    let points: Vec<BandPoint> = (0..lat.n_k())
        .into_par_iter()
        .map(|ik| band_point(&sol.potential, lat, &sol.basis, band, &lat.k_point(ik)[..d]))
        .collect::<Result<Vec<_>>>()?;
    let rammal_wilkinson = points
        .iter()
        .map(|p| [[0.0, p.m12], [-p.m12, 0.0]])
        .collect();
    let velocity = points.iter().map(|p| p.gradient).collect();

    Ok(BerryData {
        band,
        connection,
        curvature,
        rammal_wilkinson,
        velocity,
        chern_raw,
        chern: chern_raw.round() as i64,
        gap_tolerance,
    })
}

/// Geometry of a band of the free particle (`V = 0`).  Inside the zone its
/// Bloch functions are single plane waves independent of `k`, so
/// `𝒜 = Ω = M = 0`; the crossings on the zone boundary, which defeat the
/// lattice construction of [`berry_data`], carry no area.  Fails for a
/// non-zero potential.
pub fn free_band_geometry(sol: &BlochSolution, band: usize) -> Result<BerryData> {
    if !sol.potential.entries().iter().all(|e| e.value == C64::new(0.0, 0.0)) {
        return domain("free-band geometry requires the zero potential");
    }
    sol.check_band(band)?;
    let lat = &sol.lattice;
    let d = lat.dim();
    let velocity = (0..lat.n_k())
        .map(|ik| {
            band_point(&sol.potential, lat, &sol.basis, band, &lat.k_point(ik)[..d]).map(|p| p.gradient)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BerryData {
        band,
        connection: vec![[0.0; 2]; lat.n_k()],
        curvature: if d == 2 { vec![0.0; lat.n_k()] } else { Vec::new() },
        rammal_wilkinson: vec![[[0.0; 2]; 2]; lat.n_k()],
        velocity,
        chern_raw: 0.0,
        chern: 0,
        gap_tolerance: 0.0,
    })
}

/// Real trigonometric interpolant of samples on a shifted periodic grid
/// in reduced coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TorusInterpolant {
    dim: usize,
    /// `(q, ĉ_q)` with weights for the Nyquist modes folded in.
    modes: Vec<([f64; 2], C64)>,
}

impl TorusInterpolant {
    fn new(lat: &Lattice, samples: &[f64], centre: impl Fn(usize) -> [f64; 2]) -> Self {
        let d = lat.dim();
        let r = lat.resolution();
        let half = (r / 2) as i64;
        let qs: Vec<i64> = (-half..=half).collect();
        let weight = |q: i64| if r % 2 == 0 && q.abs() == half { 0.5 } else { 1.0 };
        let n = samples.len() as f64;
        let thetas: Vec<[f64; 2]> = (0..samples.len()).map(&centre).collect();
        let mut modes = Vec::new();
        let q2s: Vec<i64> = if d == 2 { qs.clone() } else { vec![0] };
        for &q1 in &qs {
            for &q2 in &q2s {
                let w = weight(q1) * if d == 2 { weight(q2) } else { 1.0 };
                let c: C64 = samples
                    .iter()
                    .zip(&thetas)
                    .map(|(f, t)| f * C64::from_polar(1.0, -TWO_PI * (q1 as f64 * t[0] + q2 as f64 * t[1])))
                    .sum::<C64>()
                    / n;
                if c.norm() > 0.0 {
                    modes.push(([q1 as f64, q2 as f64], c * w));
                }
            }
        }
        Self { dim: d, modes }
    }

    fn eval(&self, theta: &[f64; 2]) -> f64 {
        self.modes
            .iter()
            .map(|(q, c)| (c * C64::from_polar(1.0, TWO_PI * (q[0] * theta[0] + q[1] * theta[1]))).re)
            .sum()
    }
}

/// The first-order effective Hamiltonian of one isolated band in slowly
/// varying fields `B(r)` and `φ(r)`.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    lattice: Lattice,
    potential: PeriodicPotential,
    basis: PlaneWaveBasis,
    band: usize,
    phi: ScalarField,
    grad_phi: Vec<ScalarField>,
    field: MagneticField,
    grad_b12: Vec<ScalarField>,
    params: Parameters,
    berry: BerryData,
    energies: Vec<f64>,
    omega: Option<TorusInterpolant>,
}

/// Builds the effective Hamiltonian of `band` with electrostatic
/// potential `phi` (a field in `x1[, x2]`, i.e. in `r`).
pub fn effective_hamiltonian(
    sol: &BlochSolution,
    band: usize,
    b: &MagneticField,
    phi: &ScalarField,
    berry: &BerryData,
    params: Parameters,
) -> Result<EffectiveHamiltonian> {
    let lat = &sol.lattice;
    let d = lat.dim();
    if berry.band != band {
        return domain(format!("Berry data belong to band {}, not {band}", berry.band));
    }
    if b.dim() != d {
        return domain("magnetic field dimension does not match the lattice");
    }
    // ε = 0 is admitted here: it is the classical limit of the flow.
    if !(params.eps.is_finite() && (0.0..=1.0).contains(&params.eps)) {
        return domain(format!("epsilon must lie in [0, 1], got {}", params.eps));
    }
    if !(params.lambda.is_finite() && (0.0..=1.0).contains(&params.lambda)) {
        return domain(format!("lambda must lie in [0, 1], got {}", params.lambda));
    }
    sol.require_gap(band, Some(berry.gap_tolerance))?;
    let grad_phi = (0..d).map(|l| phi.partial(l)).collect::<Result<Vec<_>>>()?;
    let grad_b12 = if d == 2 {
        (0..2).map(|l| b.b12().partial(l)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let omega = if d == 2 {
        Some(TorusInterpolant::new(lat, &berry.curvature, |ip| lat.plaquette_centre(ip)))
    } else {
        None
    };
    Ok(EffectiveHamiltonian {
        lattice: lat.clone(),
        potential: sol.potential.clone(),
        basis: sol.basis.clone(),
        band,
        phi: phi.clone(),
        grad_phi,
        field: b.clone(),
        grad_b12,
        params,
        berry: berry.clone(),
        energies: sol.band(band)?,
        omega,
    })
}

/// Parses an electrostatic potential `φ(r)` in the position variables.
pub fn parse_potential(dim: usize, text: &str) -> Result<ScalarField> {
    ScalarField::parse(text, &position_names(dim))
}

impl EffectiveHamiltonian {
    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// The lattice.
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// The band.
    pub fn band(&self) -> usize {
        self.band
    }

    /// ε and λ.
    pub fn params(&self) -> Parameters {
        self.params
    }

    /// The magnetic field.
    pub fn field(&self) -> &MagneticField {
        &self.field
    }

    /// The Berry data.
    pub fn berry(&self) -> &BerryData {
        &self.berry
    }

    /// Band quantities at an arbitrary `k`.
    pub fn band_point(&self, k: &[f64]) -> Result<BandPoint> {
        band_point(&self.potential, &self.lattice, &self.basis, self.band, k)
    }

    /// `Ω_12(k)` from the trigonometric interpolant of the plaquette values.
    pub fn omega12(&self, k: &[f64]) -> f64 {
        match &self.omega {
            Some(interp) => interp.eval(&self.lattice.to_reduced(k)),
            None => 0.0,
        }
    }

    fn b_dot_m(&self, r: &[f64], m12: f64) -> f64 {
        if self.dim() == 1 {
            return 0.0;
        }
        2.0 * self.field.b12().eval(r) * m12
    }

    /// `h0(k, r) = E_b(k) + φ(r)` at grid point `ik`.
    pub fn h0_on_grid(&self, ik: usize, r: &[f64]) -> f64 {
        self.energies[ik] + self.phi.eval(r)
    }

    /// `h1(k, r)` at grid point `ik`.
    pub fn h1_on_grid(&self, ik: usize, r: &[f64]) -> f64 {
        let d = self.dim();
        let lambda = self.params.lambda;
        let a = self.berry.connection[ik];
        let grad_e = self.berry.velocity[ik];
        let mut value = 0.0;
        for l in 0..d {
            let mut coeff = -self.grad_phi[l].eval(r);
            for j in 0..d {
                coeff += lambda * self.field.eval(l, j, r) * grad_e[j];
            }
            value -= coeff * a[l];
        }
        let m12 = self.berry.rammal_wilkinson[ik][0][1];
        value - lambda * self.b_dot_m(r, m12)
    }

    /// `h_sc(k, r) = E_b(k) + φ(r) − ελ B·M` at grid point `ik`.
    pub fn h_sc_on_grid(&self, ik: usize, r: &[f64]) -> f64 {
        let m12 = self.berry.rammal_wilkinson[ik][0][1];
        let p = self.params;
        self.h0_on_grid(ik, r) - p.eps * p.lambda * self.b_dot_m(r, m12)
    }

    /// `h0(k, r)` at arbitrary `k`.
    pub fn h0(&self, k: &[f64], r: &[f64]) -> Result<f64> {
        Ok(self.band_point(k)?.energy + self.phi.eval(r))
    }

    /// `h_sc(k, r)` at arbitrary `k`.
    pub fn h_sc(&self, k: &[f64], r: &[f64]) -> Result<f64> {
        let bp = self.band_point(k)?;
        let p = self.params;
        Ok(bp.energy + self.phi.eval(r) - p.eps * p.lambda * self.b_dot_m(r, bp.m12))
    }

    /// Value and gradient `(∇_r, ∇_k)` of `h0` (if `leading`) or `h_sc`.
    fn value_gradient(&self, r: &[f64], k: &[f64], leading: bool) -> Result<(f64, [f64; 2], [f64; 2])> {
        let d = self.dim();
        let bp = self.band_point(k)?;
        let mut gr = [0.0; 2];
        let mut gk = bp.gradient;
        for l in 0..d {
            gr[l] = self.grad_phi[l].eval(r);
        }
        let mut value = bp.energy + self.phi.eval(r);
        let c = self.params.eps * self.params.lambda;
        if !leading && c != 0.0 && d == 2 && !self.field.is_zero() {
            let b12 = self.field.b12().eval(r);
            value -= c * 2.0 * b12 * bp.m12;
            for l in 0..2 {
                gr[l] -= c * 2.0 * self.grad_b12[l].eval(r) * bp.m12;
            }
            // ∇_k M by central differences of the sum-over-states value.
            let step = 1e-4;
            for l in 0..2 {
                let mut kp = [k[0], k[1]];
                let mut km = kp;
                kp[l] += step;
                km[l] -= step;
                let dm = (self.band_point(&kp)?.m12 - self.band_point(&km)?.m12) / (2.0 * step);
                gk[l] -= c * 2.0 * b12 * dm;
            }
        }
        Ok((value, gr, gk))
    }

    /// `h0` as a phase-space Hamiltonian `z = [r.., k..]`.
    pub fn leading(&self) -> BandHamiltonian<'_> {
        BandHamiltonian { eff: self, leading: true }
    }

    /// `h_sc` as a phase-space Hamiltonian `z = [r.., k..]`.
    pub fn semiclassical(&self) -> BandHamiltonian<'_> {
        BandHamiltonian { eff: self, leading: false }
    }
}

/// A view of [`EffectiveHamiltonian`] as a phase-space function, usable
/// with [`crate::semiclassics::magnetic_flow`].  Evaluation failures
/// (solver breakdown) surface as NaN, which the flow reports.
#[derive(Debug, Clone, Copy)]
pub struct BandHamiltonian<'a> {
    eff: &'a EffectiveHamiltonian,
    leading: bool,
}

impl PhaseSpaceHamiltonian for BandHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.eff.dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let d = self.eff.dim();
        self.eff
            .value_gradient(&z[..d], &z[d..], self.leading)
            .map_or(f64::NAN, |v| v.0)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let d = self.eff.dim();
        match self.eff.value_gradient(&z[..d], &z[d..], self.leading) {
            Ok((_, gr, gk)) => {
                out[..d].copy_from_slice(&gr[..d]);
                out[d..2 * d].copy_from_slice(&gk[..d]);
            }
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

/// `(ṙ, k̇)` from `λB ṙ − k̇ = ∇_r h`, `ṙ + εΩ k̇ = ∇_k h`.
fn macroscopic_rhs(eff: &EffectiveHamiltonian, z: &[f64]) -> Result<Vec<f64>> {
    let d = eff.dim();
    let (r, k) = (&z[..d], &z[d..]);
    let (_, gr, gk) = eff.value_gradient(r, k, false)?;
    let p = eff.params;
    let omega = eff.omega12(k);
    if d == 2 {
        let b12 = eff.field.b12().eval(r);
        let pivot = 1.0 + p.eps * p.lambda * b12 * omega;
        if pivot.abs() < SINGULARITY_TOLERANCE || !pivot.is_finite() {
            return Err(Error::Numerical(format!(
                "singular symplectic matrix: 1 + ελB₁₂Ω₁₂ = {pivot:e} at r = ({:.6}, {:.6}), k = ({:.6}, {:.6})",
                r[0], r[1], k[0], k[1]
            )));
        }
    }
    let n = 2 * d;
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for l in 0..d {
        for j in 0..d {
            s[(l, j)] = p.lambda * eff.field.eval(l, j, r);
            let om = if d == 2 && l != j {
                if l < j {
                    omega
                } else {
                    -omega
                }
            } else {
                0.0
            };
            s[(d + l, d + j)] = p.eps * om;
        }
        s[(l, d + l)] = -1.0;
        s[(d + l, l)] = 1.0;
        rhs[l] = gr[l];
        rhs[d + l] = gk[l];
    }
    let sol = s
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular symplectic matrix in the macroscopic flow".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Integrates the ε-modified semiclassical flow of `h_sc` from
/// `(r0, k0)` up to time `t_end` with classical RK4 of step `≈ dt`.
/// Quasi-momenta are folded into the Brillouin zone after every step.
pub fn macroscopic_flow(eff: &EffectiveHamiltonian, r0: &[f64], k0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    let d = eff.dim();
    if r0.len() != d || k0.len() != d {
        return domain("initial point has the wrong dimension");
    }
    if !(dt.is_finite() && dt > 0.0) {
        return domain(format!("time step must be positive, got {dt}"));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return domain(format!("final time must be non-negative, got {t_end}"));
    }
    let steps = ((t_end / dt).ceil() as usize).max(usize::from(t_end > 0.0));
    let h = if steps > 0 { t_end / steps as f64 } else { 0.0 };
    let mut z: Vec<f64> = r0.iter().chain(k0).copied().collect();
    fold_k(eff, &mut z);
    let hsc = eff.semiclassical();
    let mut traj = Trajectory {
        times: vec![0.0],
        points: vec![z.clone()],
        energies: vec![hsc.value(&z)],
    };
    let axpy = |z: &[f64], a: f64, k: &[f64]| -> Vec<f64> { z.iter().zip(k).map(|(x, y)| x + a * y).collect() };
    for step in 1..=steps {
        let t_prev = (step - 1) as f64 * h;
        let stage = |z: &[f64]| {
            macroscopic_rhs(eff, z).map_err(|e| Error::Numerical(format!("{e} (last valid time {t_prev})")))
        };
        let k1 = stage(&z)?;
        let k2 = stage(&axpy(&z, 0.5 * h, &k1))?;
        let k3 = stage(&axpy(&z, 0.5 * h, &k2))?;
        let k4 = stage(&axpy(&z, h, &k3))?;
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "macroscopic flow left the finite range (last valid time {t_prev})"
            )));
        }
        fold_k(eff, &mut z);
        traj.times.push(step as f64 * h);
        traj.energies.push(hsc.value(&z));
        traj.points.push(z.clone());
    }
    Ok(traj)
}

fn fold_k(eff: &EffectiveHamiltonian, z: &mut [f64]) {
    let d = eff.dim();
    let (kf, _) = eff.lattice.fold(&z[d..]);
    z[d..].copy_from_slice(&kf[..d]);
}

/// The Poisson tensor entry `{r_1, r_2}` of the modified symplectic form,
/// estimated from the flow linearisation: the response of `ṙ_1` to the
/// test potential `φ = s·r_2`, with `ḟ = {h, f}`.
pub fn position_bracket(eff: &EffectiveHamiltonian, r0: &[f64], k0: &[f64], tau: f64, strength: f64) -> Result<f64> {
    if eff.dim() != 2 {
        return domain("position bracket needs two dimensions");
    }
    let velocity = |s: f64| -> Result<f64> {
        let mut probe = eff.clone();
        probe.phi = eff.phi.add(&ScalarField::func(move |r: &[f64]| s * r[1]));
        probe.grad_phi[1] = probe.grad_phi[1].add(&ScalarField::Const(s));
        let traj = macroscopic_flow(&probe, r0, k0, tau, tau)?;
        Ok((traj.endpoint()[0] - r0[0]) / tau)
    };
    let dv = (velocity(strength)? - velocity(-strength)?) / (2.0 * strength);
    // ṙ_1 = {h, r_1} = −{r_1, r_2} ∂_{r_2}h + …
    Ok(-dv)
}

/// Current of a filled band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallCurrent {
    /// `j = (1/|BZ|) ∫ [Ω·∇_rφ − λ Ω·B·∇_k E_b] dk`.
    pub current: [f64; 2],
    /// The Chern term `(1/|BZ|) ∫ Ω dk · ∇_rφ`.
    pub chern_term: [f64; 2],
    /// The magnetic term `−(λ/|BZ|) ∫ Ω·B·∇_k E_b dk`.
    pub magnetic_term: [f64; 2],
    /// `∫_BZ ∇_k E_b dk` on the grid (vanishes for periodic `E_b`).
    pub gradient_integral: [f64; 2],
    /// The Chern number of the band.
    pub chern: i64,
}

/// Current carried by the filled band at position `r`.
pub fn hall_current(eff: &EffectiveHamiltonian, r: &[f64]) -> Result<HallCurrent> {
    let lat = &eff.lattice;
    let d = lat.dim();
    if r.len() != d {
        return domain("position has the wrong dimension");
    }
    let nk = lat.n_k() as f64;
    let mut gradient_integral = [0.0; 2];
    for v in &eff.berry.velocity {
        for l in 0..d {
            gradient_integral[l] += v[l];
        }
    }
    for g in gradient_integral.iter_mut() {
        *g *= lat.bz_volume() / nk;
    }
    let mut chern_term = [0.0; 2];
    let mut magnetic_term = [0.0; 2];
    if d == 2 {
        let grad_phi: Vec<f64> = eff.grad_phi.iter().map(|g| g.eval(r)).collect();
        let lambda = eff.params.lambda;
        let b12 = eff.field.b12().eval(r);
        let centre_velocity: Vec<[f64; 2]> = if lambda == 0.0 || b12 == 0.0 {
            vec![[0.0; 2]; lat.n_k()]
        } else {
            (0..lat.n_k())
                .into_par_iter()
                .map(|ip| {
                    let k = lat.to_cartesian(&lat.plaquette_centre(ip));
                    eff.band_point(&k[..2]).map(|p| p.gradient)
                })
                .collect::<Result<Vec<_>>>()?
        };
        for ip in 0..lat.n_k() {
            for l in 0..2 {
                for j in 0..2 {
                    let om = eff.berry.omega(ip, l, j);
                    chern_term[l] += om * grad_phi[j];
                    // (Ω B ∇E)_l = Ω_lm B_mj ∂_j E
                    for m in 0..2 {
                        let bmj = eff.field.eval(m, j, r);
                        magnetic_term[l] -= lambda * eff.berry.omega(ip, l, m) * bmj * centre_velocity[ip][j];
                    }
                }
            }
        }
        for l in 0..2 {
            chern_term[l] /= nk;
            magnetic_term[l] /= nk;
        }
    }
    Ok(HallCurrent {
        current: [chern_term[0] + magnetic_term[0], chern_term[1] + magnetic_term[1]],
        chern_term,
        magnetic_term,
        gradient_integral,
        chern: eff.berry.chern,
    })
}

/// Samples of a wave function on a supercell of `R^d` unit cells (`R` per
/// axis), `P` points per cell axis, at `r = Σ_j (g_j/P) e_j`,
/// `g_j ∈ 0..R·P`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupercellFunction {
    /// Cells per axis `R`.
    pub cells: usize,
    /// Points per cell axis `P`.
    pub points_per_cell: usize,
    /// Samples.
    pub values: Vec<C64>,
}

impl SupercellFunction {
    /// Samples `f(r)` on the supercell of `lat` with `cells` cells per axis.
    pub fn from_fn(lat: &Lattice, cells: usize, points_per_cell: usize, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        if cells == 0 || points_per_cell == 0 {
            return domain("supercell needs at least one cell and one point per cell");
        }
        let d = lat.dim();
        let side = cells * points_per_cell;
        let values = (0..side.pow(d as u32))
            .map(|flat| {
                let g = decode(flat, side, d);
                let s = [g[0] as f64 / points_per_cell as f64, g[1] as f64 / points_per_cell as f64];
                let r = lat.position(&s);
                f(&r[..d])
            })
            .collect();
        Ok(Self {
            cells,
            points_per_cell,
            values,
        })
    }

    /// `‖Ψ‖` with the sampling weight `cell volume / P^d`.
    pub fn norm(&self, lat: &Lattice) -> f64 {
        let w = lat.cell_volume() / (self.points_per_cell as f64).powi(lat.dim() as i32);
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * w).sqrt()
    }
}

/// The Zak transform `(𝒵Ψ)(k, y)` on the Brillouin-zone grid × one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZakTransform {
    /// The lattice.
    pub lattice: Lattice,
    /// Points per cell axis `P`.
    pub points_per_cell: usize,
    /// `values[ik · P^d + iy]`.
    pub values: Vec<C64>,
}

impl ZakTransform {
    /// The fibered norm `((1/R^d) Σ_k ‖(𝒵Ψ)(k,·)‖²_cell)^{1/2}`.
    pub fn fibered_norm(&self) -> f64 {
        let d = self.lattice.dim();
        let w = self.lattice.cell_volume() / (self.points_per_cell as f64).powi(d as i32);
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (total * w / self.lattice.n_k() as f64).sqrt()
    }

    /// The fiber at grid point `ik`.
    pub fn fiber(&self, ik: usize) -> &[C64] {
        let p = self.points_per_cell.pow(self.lattice.dim() as u32);
        &self.values[ik * p..(ik + 1) * p]
    }
}

fn check_supercell(psi: &SupercellFunction, lat: &Lattice) -> Result<()> {
    if psi.cells != lat.resolution() {
        return domain(format!(
            "incommensurate supercell: {} cells per axis but {} Brillouin-zone points",
            psi.cells,
            lat.resolution()
        ));
    }
    let side = psi.cells * psi.points_per_cell;
    if psi.points_per_cell == 0 || psi.values.len() != side.pow(lat.dim() as u32) {
        return domain("supercell samples do not match the declared shape");
    }
    Ok(())
}

/// `Σ_γ e^{−ik·(y+γ)} Ψ(y+γ)` for every cell point `y`, at arbitrary `k`.
fn zak_fiber(psi: &SupercellFunction, lat: &Lattice, theta: &[f64; 2]) -> Vec<C64> {
    let d = lat.dim();
    let p = psi.points_per_cell;
    let r = psi.cells;
    let side = r * p;
    (0..p.pow(d as u32))
        .map(|iy| {
            let y = decode(iy, p, d);
            (0..r.pow(d as u32))
                .map(|ic| {
                    let m = decode(ic, r, d);
                    let mut g = [0usize; 2];
                    let mut phase = 0.0;
                    for j in 0..d {
                        g[j] = m[j] * p + y[j];
                        phase += theta[j] * g[j] as f64 / p as f64;
                    }
                    psi.values[encode(&g[..d], side)] * C64::from_polar(1.0, -TWO_PI * phase)
                })
                .sum()
        })
        .collect()
}

/// The Zak transform of a supercell function; the supercell must hold as
/// many cells per axis as the Brillouin-zone grid has points.
pub fn zak_transform(psi: &SupercellFunction, lat: &Lattice) -> Result<ZakTransform> {
    check_supercell(psi, lat)?;
    let fibers: Vec<Vec<C64>> = (0..lat.n_k())
        .into_par_iter()
        .map(|ik| zak_fiber(psi, lat, &lat.reduced(ik)))
        .collect();
    Ok(ZakTransform {
        lattice: lat.clone(),
        points_per_cell: psi.points_per_cell,
        values: fibers.concat(),
    })
}

/// `(𝒵Ψ)(k, ·)` at an arbitrary quasi-momentum `k`.
pub fn zak_at(psi: &SupercellFunction, lat: &Lattice, k: &[f64]) -> Result<Vec<C64>> {
    check_supercell(psi, lat)?;
    if k.len() != lat.dim() {
        return domain("k-point has the wrong dimension");
    }
    Ok(zak_fiber(psi, lat, &lat.to_reduced(k)))
}

/// Inverts the Zak transform:
/// `Ψ(y+γ) = (1/R^d) Σ_k e^{ik·(y+γ)} (𝒵Ψ)(k, y)`.
pub fn inverse_zak(z: &ZakTransform) -> SupercellFunction {
    let lat = &z.lattice;
    let d = lat.dim();
    let p = z.points_per_cell;
    let r = lat.resolution();
    let side = r * p;
    let nk = lat.n_k();
    let values = (0..side.pow(d as u32))
        .into_par_iter()
        .map(|flat| {
            let g = decode(flat, side, d);
            let mut y = [0usize; 2];
            for j in 0..d {
                y[j] = g[j] % p;
            }
            let iy = encode(&y[..d], p);
            (0..nk)
                .map(|ik| {
                    let theta = lat.reduced(ik);
                    let phase: f64 = (0..d).map(|j| theta[j] * g[j] as f64 / p as f64).sum();
                    z.fiber(ik)[iy] * C64::from_polar(1.0, TWO_PI * phase)
                })
                .sum::<C64>()
                / nk as f64
        })
        .collect();
    SupercellFunction {
        cells: r,
        points_per_cell: p,
        values,
    }
}
