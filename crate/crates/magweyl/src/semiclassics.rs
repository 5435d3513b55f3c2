//! Magnetic Hamiltonian flows, Heisenberg evolution and the Egorov defect.
//!
//! # Flow convention
//!
//! The magnetic flow of a classical Hamiltonian `h(x, ξ)` solves
//!
//! ```text
//! ẋ = ∇_ξ h,    ξ̇ = -∇_x h + λ B(x) ∇_ξ h,    (B v)_l = B_lj v_j,
//! ```
//!
//! the explicit form of the magnetic symplectic system.  Along the flow
//! `d/dt (f ∘ φ_t) = {h, f ∘ φ_t}_B` with the bracket of
//! [`magnetic_poisson`](crate::moyal::magnetic_poisson), which is the
//! classical limit of the Heisenberg generator `(i/ε)[H, ·]`.  Integration
//! is classic fixed-step RK4: the step is `T / ⌈T / dt⌉`, so every run ends
//! exactly at `T` and repeated runs are bit-identical.
//!
//! # Egorov defect
//!
//! [`egorov_defect`] compares the Heisenberg observable
//! `e^{itH/ε} Op^A(f) e^{-itH/ε}`, computed from a dense eigendecomposition
//! of `H = Op^A(h)`, with the quantization of the classically evolved
//! observable `f ∘ φ_t` (see [`classical_pullback`]), in operator norm.
//! For bounded fields and Hamiltonians with bounded derivatives the
//! defect is `O(ε²)`.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::expr::PhaseSpaceFunction;
use crate::geometry::{MagneticField, Parameters, VectorPotential};
use crate::grid::{sample_symbol, spectral_derivative, GridSpec, HilbertGrid, SymbolField};
use crate::linalg::{self, CMatrix};
use crate::quantizer::{quantize, OperatorKernel};

/// Largest Hermiticity defect accepted for a quantized Hamiltonian.
pub const HERMITICITY_TOLERANCE: f64 = 1e-8;

/// A sampled phase-space trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Strictly increasing time stamps, starting at 0.
    pub times: Vec<f64>,
    /// Phase-space points `[x.., ξ..]` at each time stamp.
    pub points: Vec<Vec<f64>>,
    /// Energy `h(x(t), ξ(t))` at each time stamp.
    pub energies: Vec<f64>,
}

impl Trajectory {
    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len() / 2)
    }

    /// The last phase-space point.
    pub fn endpoint(&self) -> &[f64] {
        self.points.last().map_or(&[], |p| p.as_slice())
    }

    /// Largest relative energy deviation from the initial energy.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies.first().copied().unwrap_or(0.0);
        let scale = e0.abs().max(1e-300);
        self.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / scale
    }

    /// Checks the type invariants: strictly increasing times and finite
    /// points and energies.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.points.len() || self.times.len() != self.energies.len() {
            return domain("trajectory columns have different lengths");
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("trajectory time stamps are not strictly increasing");
        }
        let finite = self.points.iter().flatten().chain(&self.energies).all(|v| v.is_finite());
        if !finite {
            return domain("trajectory contains non-finite values");
        }
        Ok(())
    }
}

/// Anything that can drive a magnetic flow: a real function on phase
/// space `z = [x.., ξ..]` with a gradient.
pub trait PhaseSpaceHamiltonian: Sync {
    /// Configuration-space dimension `d`.
    fn dim(&self) -> usize;
    /// Value at `z`.
    fn value(&self, z: &[f64]) -> f64;
    /// Gradient `(∇_x h, ∇_ξ h)` at `z`, written to `out` (length `2d`).
    fn gradient(&self, z: &[f64], out: &mut [f64]);
}

/// A classical Hamiltonian: an analytic expression (exact gradients) or a
/// sampled symbol (spectrally interpolated gradients).
#[derive(Debug, Clone)]
pub enum Hamiltonian {
    /// Expression in `x1.., p1..`.
    Expression(PhaseSpaceFunction),
    /// Sampled symbol; values and gradients are trigonometric interpolants.
    Symbol(SampledHamiltonian),
}

/// A sampled Hamiltonian with precomputed spectra of its gradient.
#[derive(Debug, Clone)]
pub struct SampledHamiltonian {
    symbol: SymbolField,
    spectrum: Vec<C64>,
    /// Spectra of `∂_{x_1}, .., ∂_{x_d}, ∂_{ξ_1}, .., ∂_{ξ_d}`.
    gradient: Vec<(SymbolField, Vec<C64>)>,
}

impl Hamiltonian {
    /// Parses an expression Hamiltonian in `x1.., p1..`.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        Ok(Self::Expression(PhaseSpaceFunction::parse(dim, text)?))
    }

    /// Wraps a sampled symbol.
    pub fn from_symbol(symbol: SymbolField) -> Self {
        let g = symbol.grid;
        let d = g.dim;
        let z = [0usize; 2];
        let gradient = (0..2 * d)
            .map(|s| {
                let mut unit = [0usize; 2];
                unit[s % d] = 1;
                let field = if s < d {
                    spectral_derivative(&symbol, &unit[..d], &z[..d])
                } else {
                    spectral_derivative(&symbol, &z[..d], &unit[..d])
                };
                let spec = field.spectrum();
                (field, spec)
            })
            .collect();
        let spectrum = symbol.spectrum();
        Self::Symbol(SampledHamiltonian {
            symbol,
            spectrum,
            gradient,
        })
    }

    /// The Hamiltonian as a symbol on `grid` (sampled for expressions; a
    /// sampled Hamiltonian must already live on `grid`).
    pub fn to_symbol(&self, grid: &GridSpec) -> Result<SymbolField> {
        if grid.dim != self.dim() {
            return domain("Hamiltonian and grid dimensions differ");
        }
        match self {
            Self::Expression(h) => {
                let d = grid.dim;
                Ok(sample_symbol(
                    &|x: &[f64], xi: &[f64]| {
                        let mut z = [0.0; 4];
                        z[..d].copy_from_slice(x);
                        z[d..2 * d].copy_from_slice(xi);
                        C64::new(h.eval(&z[..2 * d]), 0.0)
                    },
                    grid,
                ))
            }
            Self::Symbol(s) => {
                if s.symbol.grid != *grid {
                    return domain("sampled Hamiltonian lives on a different grid");
                }
                Ok(s.symbol.clone())
            }
        }
    }
}

impl PhaseSpaceHamiltonian for Hamiltonian {
    /// Configuration-space dimension.
    fn dim(&self) -> usize {
        match self {
            Self::Expression(h) => h.dim(),
            Self::Symbol(s) => s.symbol.grid.dim,
        }
    }

    /// Value at `z = [x.., ξ..]` (real part for sampled symbols).
    fn value(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        match self {
            Self::Expression(h) => h.eval(z),
            Self::Symbol(s) => s.symbol.interpolate_with(&s.spectrum, &z[..d], &z[d..]).re,
        }
    }

    /// Gradient `(∇_x h, ∇_ξ h)` at `z`.
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        match self {
            Self::Expression(h) => h.gradient(z, out),
            Self::Symbol(s) => {
                for (o, (field, spec)) in out.iter_mut().zip(&s.gradient) {
                    *o = field.interpolate_with(spec, &z[..d], &z[d..]).re;
                }
            }
        }
    }
}

/// Right-hand side of the magnetic Hamiltonian system at `z`.
fn vector_field<H: PhaseSpaceHamiltonian + ?Sized>(h: &H, b: &MagneticField, lambda: f64, z: &[f64], out: &mut [f64]) {
    let d = h.dim();
    let mut grad = [0.0; 4];
    h.gradient(z, &mut grad[..2 * d]);
    for l in 0..d {
        out[l] = grad[d + l];
        out[d + l] = -grad[l];
    }
    if d == 2 && lambda != 0.0 && !b.is_zero() {
        let b12 = b.b12().eval(&z[..2]);
        // (B v)_1 = B_12 v_2, (B v)_2 = -B_12 v_1.
        out[2] += lambda * b12 * grad[3];
        out[3] -= lambda * b12 * grad[2];
    }
}

fn rk4_step<H: PhaseSpaceHamiltonian + ?Sized>(h: &H, b: &MagneticField, lambda: f64, z: &mut [f64], dt: f64) {
    let n = z.len();
    let mut k = [[0.0; 4]; 4];
    let mut tmp = [0.0; 4];
    vector_field(h, b, lambda, z, &mut k[0][..n]);
    for (stage, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
        for i in 0..n {
            tmp[i] = z[i] + c * dt * k[stage - 1][i];
        }
        let (_, rest) = k.split_at_mut(stage);
        vector_field(h, b, lambda, &tmp[..n], &mut rest[0][..n]);
    }
    for i in 0..n {
        z[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return domain(format!("time step must be positive, got {dt}"));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return domain(format!("final time must be non-negative, got {t_end}"));
    }
    Ok((t_end / dt).ceil() as usize)
}

fn check_flow_inputs<H: PhaseSpaceHamiltonian + ?Sized>(h: &H, b: &MagneticField, x0: &[f64], xi0: &[f64]) -> Result<()> {
    let d = h.dim();
    if b.dim() != d || x0.len() != d || xi0.len() != d {
        return domain("flow inputs have inconsistent dimensions");
    }
    Ok(())
}

/// Integrates the magnetic flow from `(x0, ξ0)` up to time `t_end`,
/// recording every step.
///
/// A non-finite state aborts with an error naming the last valid time.
pub fn magnetic_flow<H: PhaseSpaceHamiltonian + ?Sized>(
    h: &H,
    b: &MagneticField,
    lambda: f64,
    x0: &[f64],
    xi0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    check_flow_inputs(h, b, x0, xi0)?;
    let steps = step_count(t_end, dt)?;
    let d = h.dim();
    let mut z: Vec<f64> = x0.iter().chain(xi0).copied().collect();
    let mut traj = Trajectory {
        times: vec![0.0],
        points: vec![z.clone()],
        energies: vec![h.value(&z)],
    };
    if steps == 0 {
        return Ok(traj);
    }
    let step = t_end / steps as f64;
    for s in 1..=steps {
        rk4_step(h, b, lambda, &mut z[..2 * d], step);
        let e = h.value(&z);
        if !(z.iter().all(|v| v.is_finite()) && e.is_finite()) {
            return Err(Error::Numerical(format!(
                "flow state became non-finite; last valid time {}",
                traj.times.last().copied().unwrap_or(0.0)
            )));
        }
        traj.times.push(if s == steps { t_end } else { s as f64 * step });
        traj.points.push(z.clone());
        traj.energies.push(e);
    }
    Ok(traj)
}

/// The time-`t` flow map `φ_t(z)` without recording intermediate states.
pub fn flow_map<H: PhaseSpaceHamiltonian + ?Sized>(h: &H, b: &MagneticField, lambda: f64, z0: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    let d = h.dim();
    if z0.len() != 2 * d {
        return domain("phase-space point has the wrong length");
    }
    check_flow_inputs(h, b, &z0[..d], &z0[d..])?;
    let steps = step_count(t, dt)?;
    let mut z = z0.to_vec();
    if steps > 0 {
        let step = t / steps as f64;
        for _ in 0..steps {
            rk4_step(h, b, lambda, &mut z, step);
        }
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("flow state became non-finite".into()));
    }
    Ok(z)
}

/// Determinant of the Jacobian of `φ_t` at `z0` by central finite
/// differences with step `delta`; equals 1 for volume-preserving flows.
pub fn flow_jacobian_determinant<H: PhaseSpaceHamiltonian + ?Sized>(
    h: &H,
    b: &MagneticField,
    lambda: f64,
    z0: &[f64],
    t: f64,
    dt: f64,
    delta: f64,
) -> Result<f64> {
    let n = z0.len();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let mut zp = z0.to_vec();
        let mut zm = z0.to_vec();
        zp[c] += delta;
        zm[c] -= delta;
        let fp = flow_map(h, b, lambda, &zp, t, dt)?;
        let fm = flow_map(h, b, lambda, &zm, t, dt)?;
        for r in 0..n {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * delta);
        }
    }
    Ok(jac.determinant())
}

/// The classically evolved observable together with the nodes whose
/// trajectories left the sampled phase-space box.
#[derive(Debug, Clone)]
pub struct Pullback {
    /// `(f ∘ φ_t)` on the grid of `f`.
    pub field: SymbolField,
    /// Flat phase-space indices whose endpoint left the box; the value
    /// there uses the periodic continuation of the interpolant.
    pub escaped: Vec<usize>,
}

/// `(f ∘ φ_t)(X)` for every grid node `X`: the flow is run forward from
/// each node and `f` is evaluated at the endpoint by trigonometric
/// interpolation.
pub fn classical_pullback<H: PhaseSpaceHamiltonian + ?Sized>(
    f: &SymbolField,
    h: &H,
    b: &MagneticField,
    lambda: f64,
    t: f64,
    dt: f64,
) -> Result<Pullback> {
    let g = f.grid;
    let d = g.dim;
    if h.dim() != d || b.dim() != d {
        return domain("symbol, Hamiltonian and field dimensions differ");
    }
    let spec = f.spectrum();
    let np = g.n_pos();
    let x_max = 0.5 * g.length;
    let xi_max = 0.5 * g.n as f64 * g.dxi();
    let out: Vec<(C64, bool)> = (0..g.n_phase())
        .into_par_iter()
        .map(|i| {
            let x = g.pos_coords(i / np);
            let k = g.mom_coords(i % np);
            let mut z = [0.0; 4];
            z[..d].copy_from_slice(&x[..d]);
            z[d..2 * d].copy_from_slice(&k[..d]);
            let end = flow_map(h, b, lambda, &z[..2 * d], t, dt)?;
            let escaped = (0..d).any(|a| end[a].abs() > x_max || end[d + a].abs() > xi_max);
            Ok((f.interpolate_with(&spec, &end[..d], &end[d..]), escaped))
        })
        .collect::<Result<Vec<_>>>()?;
    let escaped = out.iter().enumerate().filter(|(_, (_, e))| *e).map(|(i, _)| i).collect();
    let field = SymbolField::from_values(g, out.into_iter().map(|(v, _)| v).collect())?;
    Ok(Pullback { field, escaped })
}

/// The Heisenberg observable `e^{itH/ε} Op^A(f) e^{-itH/ε}` with
/// `H = Op^A(h)`.
pub fn heisenberg_evolve(
    h_sym: &SymbolField,
    f_sym: &SymbolField,
    a: &VectorPotential,
    params: &Parameters,
    t: f64,
) -> Result<OperatorKernel> {
    if h_sym.grid != f_sym.grid {
        return domain("Hamiltonian and observable live on different grids");
    }
    let kf = quantize(f_sym, a, params)?;
    let hq = quantize(h_sym, a, params)?.operator();
    heisenberg_evolve_operator(&hq, &kf, t)
}

/// Conjugates a kernel with the propagator of an explicit Hermitian
/// operator matrix: `e^{itH/ε} K e^{-itH/ε}`.
pub fn heisenberg_evolve_operator(h_op: &CMatrix, k: &OperatorKernel, t: f64) -> Result<OperatorKernel> {
    if h_op.nrows() != k.hilbert.size() || h_op.ncols() != k.hilbert.size() {
        return domain("Hamiltonian matrix and kernel sizes differ");
    }
    let defect = linalg::hermiticity_defect(h_op);
    if defect > HERMITICITY_TOLERANCE {
        return Err(Error::Numerical(format!(
            "Hamiltonian matrix is not Hermitian (defect {defect:.3e})"
        )));
    }
    let (w, v) = linalg::hermitian_eig(h_op)?;
    let eps = k.params.eps;
    let phases: Vec<C64> = w.iter().map(|&e| C64::from_polar(1.0, -t * e / eps)).collect();
    let u = linalg::from_eigen(&v, &phases);
    let evolved = linalg::matmul(&linalg::matmul(&u.adjoint(), &k.operator()), &u);
    Ok(OperatorKernel::from_operator(k.grid, k.hilbert, k.gauge.clone(), k.params, evolved))
}

/// The exact free kinetic energy `½|P|²`, `P = -i∇`, on the micro grid:
/// the spectral multiplier `½|p|²` over the micro momenta
/// `p = 2π j / (M Δ)`, `j ∈ [-M/2, M/2)`.
///
/// A non-periodic symbol such as `½|ξ|²` cannot be represented exactly by
/// its trigonometric interpolant between symbol nodes, so
/// `quantize(½|ξ|²)` differs from this operator at the interpolation
/// level; the exact operator isolates Egorov's exactness for quadratic
/// Hamiltonians from that representation error.
pub fn kinetic_operator(h: &HilbertGrid) -> CMatrix {
    let d = h.dim;
    let m = h.m;
    let size = h.size();
    let mom: Vec<f64> = (0..m)
        .map(|j| 2.0 * std::f64::consts::PI * (j as f64 - (m / 2) as f64) / (m as f64 * h.spacing))
        .collect();
    // One-dimensional unitary DFT between nodes and momenta.
    let norm = 1.0 / (m as f64).sqrt();
    let f1 = CMatrix::from_fn(m, m, |j, i| C64::from_polar(norm, -mom[j] * h.node(i)));
    let t1 = {
        let mut scaled = f1.clone();
        for j in 0..m {
            scaled.row_mut(j).scale_mut(0.5 * mom[j] * mom[j]);
        }
        linalg::matmul(&f1.adjoint(), &scaled)
    };
    if d == 1 {
        return t1;
    }
    // ½(P₁² + P₂²) = T ⊗ I + I ⊗ T on the row-major product grid.
    CMatrix::from_fn(size, size, |r, c| {
        let (r0, r1, c0, c1) = (r / m, r % m, c / m, c % m);
        let mut v = C64::new(0.0, 0.0);
        if r1 == c1 {
            v += t1[(r0, c0)];
        }
        if r0 == c0 {
            v += t1[(r1, c1)];
        }
        v
    })
}

/// Egorov defect of the free motion `h = ½|ξ|²` without field, with the
/// quantum evolution generated by the exact [`kinetic_operator`].  The
/// classical flow is the shear `(x, ξ) ↦ (x + tξ, ξ)`, so Egorov's theorem
/// is exact and the defect measures the discretization floor.
pub fn free_egorov_defect(f: &SymbolField, params: &Parameters, settings: &EgorovSettings) -> Result<f64> {
    let d = f.grid.dim;
    let a = VectorPotential::zero(d)?;
    let kf = quantize(f, &a, params)?;
    let quantum = heisenberg_evolve_operator(&kinetic_operator(&kf.hilbert), &kf, settings.time)?;
    let text = if d == 1 { "0.5*p1^2" } else { "0.5*(p1^2 + p2^2)" };
    let h = Hamiltonian::parse(d, text)?;
    let b = MagneticField::zero(d)?;
    let pulled = classical_pullback(f, &h, &b, params.lambda, settings.time, settings.dt)?;
    let classical = quantize(&pulled.field, &a, params)?;
    Ok(quantum.sub(&classical)?.norm())
}

/// Time step and final time of an Egorov comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgorovSettings {
    /// Evolution time `t`.
    pub time: f64,
    /// RK4 step for the classical flow.
    pub dt: f64,
}

/// Operator-norm distance between the Heisenberg observable and the
/// quantized classically evolved observable.  The field is `B = curl A`.
pub fn egorov_defect(
    h: &Hamiltonian,
    f: &SymbolField,
    a: &VectorPotential,
    params: &Parameters,
    settings: &EgorovSettings,
) -> Result<f64> {
    let b = a.curl()?;
    let h_sym = h.to_symbol(&f.grid)?;
    let quantum = heisenberg_evolve(&h_sym, f, a, params, settings.time)?;
    let pulled = classical_pullback(f, h, &b, params.lambda, settings.time, settings.dt)?;
    let classical = quantize(&pulled.field, a, params)?;
    Ok(quantum.sub(&classical)?.norm())
}

/// One point of an Egorov ε-sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgorovPoint {
    /// Semiclassical parameter.
    pub eps: f64,
    /// Operator-norm defect.
    pub defect: f64,
}

/// Egorov defects over a list of ε values at fixed coupling.
pub fn egorov_sweep(
    h: &Hamiltonian,
    f: &SymbolField,
    a: &VectorPotential,
    lambda: f64,
    epss: &[f64],
    settings: &EgorovSettings,
) -> Result<Vec<EgorovPoint>> {
    epss.iter()
        .map(|&eps| {
            let p = Parameters::new(eps, lambda)?;
            Ok(EgorovPoint {
                eps,
                defect: egorov_defect(h, f, a, &p, settings)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_count_hits_the_final_time() {
        assert_eq!(step_count(1.0, 0.3).unwrap(), 4);
        assert_eq!(step_count(0.0, 0.3).unwrap(), 0);
        assert!(step_count(1.0, 0.0).is_err());
        assert!(step_count(-1.0, 0.1).is_err());
    }

    #[test]
    fn free_flow_is_a_straight_line() {
        let h = Hamiltonian::parse(1, "0.5*p1^2").unwrap();
        let b = MagneticField::zero(1).unwrap();
        let tr = magnetic_flow(&h, &b, 0.0, &[0.2], &[0.7], 2.0, 0.01).unwrap();
        let end = tr.endpoint();
        assert!((end[0] - (0.2 + 1.4)).abs() < 1e-12 && (end[1] - 0.7).abs() < 1e-14);
        tr.validate().unwrap();
    }

    #[test]
    fn sampled_and_expression_gradients_agree() {
        let g = GridSpec::new(1, 16, 4.0 * std::f64::consts::PI).unwrap();
        let k = 2.0 * std::f64::consts::PI / g.length;
        let kp = 2.0 * std::f64::consts::PI / (g.n as f64 * g.dxi());
        let text = format!("0.3*cos({k}*x1) + 0.5*sin({kp}*p1)");
        let he = Hamiltonian::parse(1, &text).unwrap();
        let hs = Hamiltonian::from_symbol(he.to_symbol(&g).unwrap());
        let (mut a, mut c) = ([0.0; 2], [0.0; 2]);
        he.gradient(&[0.37, -1.1], &mut a);
        hs.gradient(&[0.37, -1.1], &mut c);
        assert!((a[0] - c[0]).abs() < 1e-12 && (a[1] - c[1]).abs() < 1e-12, "{a:?} {c:?}");
    }
}
