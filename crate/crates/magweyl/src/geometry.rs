//! Magnetic fields, vector potentials, gauges, circulations and fluxes.
//!
//! # Conventions
//!
//! * A magnetic field is an antisymmetric matrix of functions
//!   `B_kl(x) = ∂_k A_l(x) - ∂_l A_k(x)`.  In one dimension `B ≡ 0`.
//! * The circulation `Γ^A([x, y]) = ∫_0^1 A(x + t(y - x))·(y - x) dt` is
//!   computed by Gauss–Legendre quadrature along the straight segment.
//! * The flux through the oriented triangle `⟨x, y, z⟩` is the Stokes
//!   circulation along `x → y → z → x`; for constant `B_12 = b` it equals
//!   `b` times the signed area of the triangle.
//! * The scaled flux ("twister") is
//!   `γ_ε(x, y, z) = ε^{-1} Γ^B(⟨x - ε(y+z)/2, x + ε(y-z)/2, x + ε(y+z)/2⟩)`
//!   and has the Taylor expansion `γ_ε = Σ_{n≥1} ε^n ℒ_n(x, y, z)`, with
//!   `ℒ_1 = ½ B_kl(x) y_k z_l` (see [`flux_expansion_terms`]).
//!
//! # Parameters
//!
//! [`Parameters`] bundles the semiclassical scale `ε ∈ (0, 1]` and the
//! coupling `λ ∈ [0, 1]`; operators act with `Q = ε x̂` and
//! `P = -i∇ - λ A(ε x̂)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::expr::{position_names, ScalarField};
use crate::quad::unit_rule;

/// Default Gauss–Legendre node count for circulations and the transversal
/// gauge.
pub const DEFAULT_NODES: usize = 16;

/// Largest order accepted by [`flux_expansion_terms`].
pub const MAX_FLUX_ORDER: usize = 6;

/// The semiclassical scale ε and the coupling λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Semiclassical parameter, `0 < ε ≤ 1`.
    pub eps: f64,
    /// Coupling constant, `0 ≤ λ ≤ 1`.
    pub lambda: f64,
}

impl Parameters {
    /// Validates the ranges `ε ∈ (0, 1]`, `λ ∈ [0, 1]`.
    pub fn new(eps: f64, lambda: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
            return domain(format!("epsilon must lie in (0, 1], got {eps}"));
        }
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return domain(format!("lambda must lie in [0, 1], got {lambda}"));
        }
        Ok(Self { eps, lambda })
    }
}

/// A magnetic field `B_kl(x)` on `R^d`, `d ∈ {1, 2}`.
#[derive(Debug, Clone)]
pub struct MagneticField {
    dim: usize,
    /// `B_12` in two dimensions; unused in one dimension.
    b12: ScalarField,
}

impl MagneticField {
    /// The zero field in dimension `dim`.
    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            b12: ScalarField::zero(),
        })
    }

    /// A two-dimensional field with `B_12 = b12` (and `B_21 = -b12`).
    pub fn planar(b12: ScalarField) -> Self {
        Self { dim: 2, b12 }
    }

    /// A constant two-dimensional field `B_12 = b`.
    pub fn constant(b: f64) -> Self {
        Self::planar(ScalarField::Const(b))
    }

    /// Parses `B_12` from an expression in `x1, x2`.
    pub fn parse_planar(text: &str) -> Result<Self> {
        Ok(Self::planar(ScalarField::parse(text, &position_names(2))?))
    }

    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Returns `true` if the field vanishes identically.
    pub fn is_zero(&self) -> bool {
        self.dim == 1 || self.b12.is_zero()
    }

    /// Returns `true` if the field is constant.
    pub fn is_constant(&self) -> bool {
        self.dim == 1 || matches!(self.b12, ScalarField::Const(_))
    }

    /// The component `B_kl` as a field (antisymmetric in `k, l`).
    pub fn component(&self, k: usize, l: usize) -> ScalarField {
        if self.dim == 1 || k == l {
            return ScalarField::zero();
        }
        if k < l {
            self.b12.clone()
        } else {
            self.b12.scale(-1.0)
        }
    }

    /// The planar component `B_12` (zero in one dimension).
    pub fn b12(&self) -> &ScalarField {
        &self.b12
    }

    /// `B_kl(x)`.
    pub fn eval(&self, k: usize, l: usize, x: &[f64]) -> f64 {
        if self.dim == 1 || k == l {
            return 0.0;
        }
        let v = self.b12.eval(x);
        if k < l {
            v
        } else {
            -v
        }
    }

    /// Derivative `∂_{slots} B_12` as a field.
    pub fn derivative(&self, slots: &[usize]) -> Result<ScalarField> {
        if self.dim == 1 {
            return Ok(ScalarField::zero());
        }
        self.b12.partial_multi(slots)
    }

    /// Largest violation of `B_kl = -B_lk` at the given probes (identically
    /// zero by construction; kept as an executable invariant).
    pub fn antisymmetry_defect(&self, probes: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for p in probes {
            for k in 0..self.dim {
                for l in 0..self.dim {
                    worst = worst.max((self.eval(k, l, p) + self.eval(l, k, p)).abs());
                }
            }
        }
        worst
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=2).contains(&dim) {
        return domain(format!("dimension must be 1 or 2, got {dim}"));
    }
    Ok(())
}

/// A vector potential `A_l(x)` with a gauge label.
#[derive(Debug, Clone)]
pub struct VectorPotential {
    components: Vec<ScalarField>,
    label: String,
}

impl VectorPotential {
    /// Builds from component fields (one per axis).
    pub fn new(components: Vec<ScalarField>, label: impl Into<String>) -> Result<Self> {
        check_dim(components.len())?;
        Ok(Self {
            components,
            label: label.into(),
        })
    }

    /// The zero potential.
    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(vec![ScalarField::zero(); dim], "zero")
    }

    /// Parses components from expressions in `x1, x2`.
    pub fn parse(texts: &[&str], label: impl Into<String>) -> Result<Self> {
        let names = position_names(texts.len());
        let comps = texts
            .iter()
            .map(|t| ScalarField::parse(t, &names))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps, label)
    }

    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Gauge label.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// The components.
    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    /// Returns `true` if all components are the constant zero.
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(ScalarField::is_zero)
    }

    /// `A(x)` written into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x);
        }
    }

    /// The magnetic field `B_12 = ∂_1 A_2 - ∂_2 A_1` as a field (zero in one
    /// dimension).
    pub fn curl(&self) -> Result<MagneticField> {
        if self.dim() == 1 {
            return MagneticField::zero(1);
        }
        let d12 = self.components[1].partial(0)?;
        let d21 = self.components[0].partial(1)?;
        Ok(MagneticField::planar(d12.add(&d21.scale(-1.0))))
    }

    /// Maximal deviation of the central-difference curl of `A` from `B` at
    /// the probe points (step `1e-4`).
    pub fn curl_defect(&self, b: &MagneticField, probes: &[Vec<f64>]) -> f64 {
        if self.dim() == 1 {
            return 0.0;
        }
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for p in probes {
            let diff = |comp: usize, axis: usize| {
                let mut a = p.clone();
                let mut c = p.clone();
                a[axis] += h;
                c[axis] -= h;
                (self.components[comp].eval(&a) - self.components[comp].eval(&c)) / (2.0 * h)
            };
            let curl = diff(1, 0) - diff(0, 1);
            worst = worst.max((curl - b.eval(0, 1, p)).abs());
        }
        worst
    }
}

/// A gauge function `χ(x)`.
#[derive(Debug, Clone)]
pub struct GaugeTransform {
    /// The scalar function.
    pub chi: ScalarField,
    /// Label appended to the gauge label of transformed potentials.
    pub label: String,
}

impl GaugeTransform {
    /// Parses `χ` from an expression in `x1, x2`.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        Ok(Self {
            chi: ScalarField::parse(text, &position_names(dim))?,
            label: text.to_string(),
        })
    }
}

/// The transversal (Poincaré) gauge
/// `A_l(x) = -∫_0^1 B_lj(s x) s x_j ds`, with a 16-node Gauss–Legendre rule.
pub fn transversal_gauge(b: &MagneticField) -> VectorPotential {
    transversal_gauge_with(b, DEFAULT_NODES)
}

/// [`transversal_gauge`] with a configurable node count.
pub fn transversal_gauge_with(b: &MagneticField, nodes: usize) -> VectorPotential {
    let d = b.dim();
    if b.is_zero() {
        return VectorPotential::zero(d).expect("valid dimension");
    }
    if let ScalarField::Const(c) = b.b12() {
        // The s-integral of a constant is 1/2: the symmetric gauge.
        let c = *c;
        return VectorPotential::new(
            vec![
                ScalarField::func(move |x| -0.5 * c * x[1]),
                ScalarField::func(move |x| 0.5 * c * x[0]),
            ],
            "transversal",
        )
        .expect("valid dimension");
    }
    let rule = unit_rule(nodes);
    let b12 = Arc::new(b.b12().clone());
    let comp = |l: usize| {
        let rule = rule.clone();
        let b12 = b12.clone();
        ScalarField::func(move |x| {
            // A_l = -Σ_j ∫ B_lj(sx) s x_j ds; in 2D only j ≠ l contributes.
            let (j, sign) = if l == 0 { (1, 1.0) } else { (0, -1.0) };
            let xj = x[j];
            let s_int = rule.integrate(|s| {
                let p = [s * x[0], s * x[1]];
                s * b12.eval(&p)
            });
            -sign * s_int * xj
        })
    };
    VectorPotential::new(vec![comp(0), comp(1)], "transversal").expect("valid dimension")
}

/// The gauge-transformed potential `A + ∇χ`.
pub fn apply_gauge(a: &VectorPotential, chi: &GaugeTransform) -> Result<VectorPotential> {
    let comps = a
        .components
        .iter()
        .enumerate()
        .map(|(l, c)| Ok(c.add(&chi.chi.partial(l)?)))
        .collect::<Result<Vec<_>>>()?;
    VectorPotential::new(comps, format!("{}+d({})", a.label, chi.label))
}

/// Circulation `Γ^A([x, y])` along the straight segment, 16-node rule.
pub fn circulation(a: &VectorPotential, x: &[f64], y: &[f64]) -> f64 {
    circulation_with(a, x, y, DEFAULT_NODES)
}

/// Circulation with a configurable node count.
pub fn circulation_with(a: &VectorPotential, x: &[f64], y: &[f64], nodes: usize) -> f64 {
    let d = a.dim();
    let mut dir = [0.0; 2];
    let mut any = false;
    for k in 0..d {
        dir[k] = y[k] - x[k];
        any |= dir[k] != 0.0;
    }
    if !any || a.is_zero() {
        return 0.0;
    }
    let rule = unit_rule(nodes);
    let mut p = [0.0; 2];
    rule.integrate(|t| {
        for k in 0..d {
            p[k] = x[k] + t * dir[k];
        }
        let mut s = 0.0;
        for k in 0..d {
            if dir[k] != 0.0 {
                s += a.components[k].eval(&p[..d]) * dir[k];
            }
        }
        s
    })
}

/// Scaled circulation `Γ^A_ε([x, y]) = ε^{-1} Γ^A([ε x, ε y])` between
/// microscopic points.
pub fn scaled_circulation(a: &VectorPotential, eps: f64, x: &[f64], y: &[f64]) -> f64 {
    let d = a.dim();
    let mut ex = [0.0; 2];
    let mut ey = [0.0; 2];
    for k in 0..d {
        ex[k] = eps * x[k];
        ey[k] = eps * y[k];
    }
    circulation(a, &ex[..d], &ey[..d]) / eps
}

/// Flux `Γ^B(⟨x, y, z⟩)` through the oriented triangle, via Stokes.
pub fn triangle_flux(a: &VectorPotential, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    circulation(a, x, y) + circulation(a, y, z) + circulation(a, z, x)
}

/// Scaled flux `γ_ε(x, y, z)`.
pub fn scaled_flux(a: &VectorPotential, x: &[f64], y: &[f64], z: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return domain("scaled flux needs epsilon > 0; use flux_expansion_terms at epsilon = 0");
    }
    let d = a.dim();
    let mut p1 = [0.0; 2];
    let mut p2 = [0.0; 2];
    let mut p3 = [0.0; 2];
    for k in 0..d {
        p1[k] = x[k] - 0.5 * eps * (y[k] + z[k]);
        p2[k] = x[k] + 0.5 * eps * (y[k] - z[k]);
        p3[k] = x[k] + 0.5 * eps * (y[k] + z[k]);
    }
    Ok(triangle_flux(a, &p1[..d], &p2[..d], &p3[..d]) / eps)
}

/// `ω_{ε,λ}(q; x, y) = exp(-i (λ/ε) Γ^B(⟨q, q + εx, q + εx + εy⟩))`.
pub fn omega_phase(
    a: &VectorPotential,
    q: &[f64],
    x: &[f64],
    y: &[f64],
    params: &Parameters,
) -> num_complex::Complex64 {
    let d = a.dim();
    let mut p2 = [0.0; 2];
    let mut p3 = [0.0; 2];
    for k in 0..d {
        p2[k] = q[k] + params.eps * x[k];
        p3[k] = p2[k] + params.eps * y[k];
    }
    let flux = triangle_flux(a, q, &p2[..d], &p3[..d]);
    num_complex::Complex64::from_polar(1.0, -params.lambda / params.eps * flux)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Coefficient of `y_{m_1}…y_{m_{c-1}} z_{m_c}…z_{m_{j-1}}` (for the given
/// split `c`) in `ℒ_j`, excluding the derivative of `B` and `y_k z_l`.
pub fn flux_coefficient(j: usize, c: usize) -> f64 {
    let jp = (j + 1) as f64;
    let sgn_j = if (j + 1) % 2 == 0 { 1.0 } else { -1.0 };
    let sgn_c = if c % 2 == 0 { 1.0 } else { -1.0 };
    let bracket = (1.0 - sgn_j) * c as f64 - (1.0 - sgn_c) * jp;
    -(1.0 / factorial(j)) * (-0.5f64).powi(j as i32 + 1) / (jp * jp) * binomial(j + 1, c) * bracket
}

/// The coefficients `ℒ_1(x, y, z), …, ℒ_N(x, y, z)` of the Taylor expansion
/// `γ_ε = Σ_n ε^n ℒ_n` of the scaled flux, from the closed combinatorial
/// formula
///
/// ```text
/// ℒ_j = -(1/j!) Σ_m ∂_{m_1…m_{j-1}} B_kl(x) y_k z_l (-1/2)^{j+1} (j+1)^{-2}
///        Σ_{c=1}^{j} C(j+1, c) [(1 - (-1)^{j+1}) c - (1 - (-1)^c)(j+1)]
///        y_{m_1}…y_{m_{c-1}} z_{m_c}…z_{m_{j-1}}.
/// ```
pub fn flux_expansion_terms(
    b: &MagneticField,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    if order > MAX_FLUX_ORDER {
        return Err(Error::Domain(format!(
            "flux expansion order {order} exceeds the cap {MAX_FLUX_ORDER}"
        )));
    }
    let d = b.dim();
    let mut out = vec![0.0; order];
    if b.is_zero() {
        return Ok(out);
    }
    let yz = y[0] * z[1] - y[1] * z[0]; // B_kl y_k z_l = B_12 (y∧z)
    for j in 1..=order {
        let mut total = 0.0;
        for_each_multi_index(d, j - 1, |m| {
            let deriv = match b.derivative(m) {
                Ok(f) => f.eval(x),
                Err(_) => f64::NAN,
            };
            if deriv == 0.0 {
                return;
            }
            let mut poly = 0.0;
            for c in 1..=j {
                let mut mono = 1.0;
                for (pos, &mi) in m.iter().enumerate() {
                    mono *= if pos < c - 1 { y[mi] } else { z[mi] };
                }
                poly += flux_coefficient(j, c) * mono;
            }
            total += deriv * yz * poly;
        });
        out[j - 1] = total;
    }
    Ok(out)
}

/// Calls `f` on every ordered multi-index in `[0, d)^len`.
pub fn for_each_multi_index(d: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; len];
    loop {
        f(&idx);
        let mut p = len;
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < d {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// Independent area-integral evaluation of the scaled flux,
/// `γ_ε = ε ∫∫_{0≤v≤u≤1} B_12(x + ε((u-½)y + (v-½)z)) du dv · (y∧z)`,
/// by tensor Gauss–Legendre quadrature on the triangle.
pub fn scaled_flux_area(b: &MagneticField, x: &[f64], y: &[f64], z: &[f64], eps: f64, nodes: usize) -> f64 {
    if b.is_zero() {
        return 0.0;
    }
    let rule = unit_rule(nodes);
    let yz = y[0] * z[1] - y[1] * z[0];
    let mut acc = 0.0;
    for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
        for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let v = t * u;
            let p = [
                x[0] + eps * ((u - 0.5) * y[0] + (v - 0.5) * z[0]),
                x[1] + eps * ((u - 0.5) * y[1] + (v - 0.5) * z[1]),
            ];
            acc += wu * wt * u * b.b12().eval(&p);
        }
    }
    eps * acc * yz
}
