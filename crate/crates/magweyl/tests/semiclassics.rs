//! Integration tests for magnetic flows, Heisenberg evolution and Egorov
//! defects.

mod common;

use std::f64::consts::PI;

use common::{balanced_length, gaussian_symbol, trig_symbol};
use magweyl::fit::loglog_slope;
use magweyl::geometry::{MagneticField, Parameters, VectorPotential};
use magweyl::grid::{sample_symbol, GridSpec, SymbolField};
use magweyl::linalg;
use magweyl::quantizer::quantize;
use magweyl::semiclassics::*;
use magweyl::C64;

fn cyclotron(b: f64, xi0: [f64; 2], t_end: f64) -> Trajectory {
    let h = Hamiltonian::parse(2, "0.5*(p1^2 + p2^2)").unwrap();
    magnetic_flow(&h, &MagneticField::constant(b), 1.0, &[0.1, -0.3], &xi0, t_end, 1e-3).unwrap()
}

#[test]
fn cyclotron_orbit_matches_closed_form() {
    let (b, xi0) = (0.8, [0.6, 0.2]);
    let period = 2.0 * PI / b;
    let tr = cyclotron(b, xi0, period);
    tr.validate().unwrap();
    let speed = (xi0[0] * xi0[0] + xi0[1] * xi0[1]).sqrt();
    let radius = speed / b;
    let centre = [0.1 + xi0[1] / b, -0.3 - xi0[0] / b];
    let drift = tr
        .points
        .iter()
        .map(|z| (((z[0] - centre[0]).powi(2) + (z[1] - centre[1]).powi(2)).sqrt() - radius).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-6, "radius drift {drift}");
    let end = tr.endpoint();
    let closure = ((end[0] - 0.1).powi(2) + (end[1] + 0.3).powi(2)).sqrt();
    assert!(closure < 1e-6, "orbit does not close after one period: {closure}");
}

#[test]
fn cyclotron_energy_is_conserved() {
    let tr = cyclotron(0.8, [0.6, 0.2], 10.0);
    assert!(tr.energy_drift() < 1e-8, "{}", tr.energy_drift());
}

#[test]
fn zero_coupling_is_free_motion() {
    let h = Hamiltonian::parse(2, "0.5*(p1^2 + p2^2)").unwrap();
    let tr = magnetic_flow(&h, &MagneticField::constant(0.8), 0.0, &[0.1, -0.3], &[0.6, 0.2], 3.0, 1e-2).unwrap();
    let end = tr.endpoint();
    let expected = [0.1 + 1.8, -0.3 + 0.6, 0.6, 0.2];
    for (a, b) in end.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(*tr.times.last().unwrap(), 3.0);
}

#[test]
fn flow_preserves_phase_space_volume() {
    let h = Hamiltonian::parse(2, "0.5*(p1^2 + p2^2) + 0.3*cos(0.7*x1)*sin(0.5*x2)").unwrap();
    let b = MagneticField::parse_planar("0.6 + 0.2*cos(0.9*x1)").unwrap();
    for z0 in [[0.2, -0.1, 0.5, 0.3], [1.0, 0.7, -0.4, 0.9]] {
        let det = flow_jacobian_determinant(&h, &b, 1.0, &z0, 2.0, 1e-3, 1e-5).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");
    }
}

#[test]
fn blow_up_is_reported() {
    let h = Hamiltonian::parse(1, "0.5*p1^2 - 0.25*x1^4").unwrap();
    let b = MagneticField::zero(1).unwrap();
    let err = magnetic_flow(&h, &b, 0.0, &[10.0], &[0.0], 5.0, 1e-3).unwrap_err();
    assert!(err.to_string().contains("last valid time"));
    assert!(magnetic_flow(&h, &b, 0.0, &[0.0], &[0.0], 1.0, 0.0).is_err());
}

#[test]
fn sampled_hamiltonian_flow_matches_expression_flow() {
    let g = GridSpec::new(2, 16, 4.0 * PI).unwrap();
    let k = 2.0 * PI / g.length;
    let kp = 2.0 * PI / (g.n as f64 * g.dxi());
    let text = format!("1 - cos({kp}*p1) + 1 - cos({kp}*p2) + 0.2*cos({k}*x1)*cos({k}*x2)");
    let he = Hamiltonian::parse(2, &text).unwrap();
    let hs = Hamiltonian::from_symbol(he.to_symbol(&g).unwrap());
    let b = MagneticField::constant(0.5);
    let a = magnetic_flow(&he, &b, 1.0, &[0.3, 0.1], &[0.4, -0.2], 2.0, 1e-2).unwrap();
    let c = magnetic_flow(&hs, &b, 1.0, &[0.3, 0.1], &[0.4, -0.2], 2.0, 1e-2).unwrap();
    for (p, q) in a.endpoint().iter().zip(c.endpoint()) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn pullback_at_time_zero_and_free_translation() {
    let g = GridSpec::new(1, 16, 10.0).unwrap();
    let f = trig_symbol(&g, &[([1, 0], [0, 0], C64::new(0.5, 0.0)), ([2, 0], [1, 0], C64::new(0.2, -0.1))]);
    let h = Hamiltonian::parse(1, "0.5*p1^2").unwrap();
    let b = MagneticField::zero(1).unwrap();
    let p0 = classical_pullback(&f, &h, &b, 1.0, 0.0, 1e-2).unwrap();
    assert!(p0.field.sup_dist(&f).unwrap() < 1e-12);
    let t = 0.7;
    let pt = classical_pullback(&f, &h, &b, 0.0, t, 1e-2).unwrap();
    let shifted = sample_symbol(&|x: &[f64], k: &[f64]| f.interpolate(&[x[0] + t * k[0]], k), &g);
    assert!(pt.field.sup_dist(&shifted).unwrap() < 1e-8);
}

#[test]
fn pullback_preserves_integrals() {
    let n = 32;
    let g = GridSpec::new(1, n, balanced_length(n)).unwrap();
    let f = gaussian_symbol(&g, [0.3, 0.0], [0.2, 0.0], 1.0);
    let k = 2.0 * PI / g.length;
    let h = Hamiltonian::parse(1, &format!("1 - cos({k}*p1) + 0.3*cos({k}*x1)")).unwrap();
    let pb = classical_pullback(&f, &h, &MagneticField::zero(1).unwrap(), 1.0, 1.0, 1e-2).unwrap();
    let i0 = f.integral();
    assert!((pb.field.integral() - i0).norm() < 1e-6 * i0.norm());
}

fn egorov_setup() -> (GridSpec, Hamiltonian, SymbolField, VectorPotential) {
    let n = 32;
    let g = GridSpec::new(1, n, balanced_length(n)).unwrap();
    // Both axes have period L on the balanced box.
    let k = 2.0 * PI / g.length;
    let h = Hamiltonian::parse(1, &format!("1 - cos({k}*p1) + 0.3*cos({k}*x1)")).unwrap();
    let f = gaussian_symbol(&g, [0.3, 0.0], [0.2, 0.0], 1.0);
    let a = VectorPotential::parse(&[&format!("0.4*cos({k}*x1)")], "periodic").unwrap();
    (g, h, f, a)
}

#[test]
fn heisenberg_evolution_is_unitary_conjugation() {
    let (g, h, f, a) = egorov_setup();
    let p = Parameters::new(0.25, 1.0).unwrap();
    let hs = h.to_symbol(&g).unwrap();
    let k0 = heisenberg_evolve(&hs, &f, &a, &p, 0.0).unwrap();
    let kf = quantize(&f, &a, &p).unwrap();
    assert!(linalg::sup_norm(&(&k0.operator() - &kf.operator())) < 1e-12);
    let kt = heisenberg_evolve(&hs, &f, &a, &p, 1.0).unwrap();
    assert!((kt.norm() - kf.norm()).abs() < 1e-10);
    let ht = heisenberg_evolve(&hs, &hs, &a, &p, 1.0).unwrap().operator();
    let hq = quantize(&hs, &a, &p).unwrap().operator();
    let comm = linalg::matmul(&hq, &ht) - linalg::matmul(&ht, &hq);
    assert!(linalg::sup_norm(&comm) < 1e-9);
}

#[test]
fn egorov_defect_vanishes_at_time_zero_and_is_gauge_independent() {
    let (g, h, f, a) = egorov_setup();
    let p = Parameters::new(0.25, 1.0).unwrap();
    let t0 = EgorovSettings { time: 0.0, dt: 1e-2 };
    assert!(egorov_defect(&h, &f, &a, &p, &t0).unwrap() < 1e-10);
    let t1 = EgorovSettings { time: 1.0, dt: 1e-2 };
    let k = 2.0 * PI / g.length;
    let a2 = VectorPotential::parse(&[&format!("0.4*cos({k}*x1) - 0.3*sin(2*{k}*x1)")], "other").unwrap();
    let d1 = egorov_defect(&h, &f, &a, &p, &t1).unwrap();
    let d2 = egorov_defect(&h, &f, &a2, &p, &t1).unwrap();
    assert!((d1 - d2).abs() < 1e-9, "{d1} vs {d2}");
}

#[test]
fn egorov_defect_decays_quadratically() {
    let (_, h, f, a) = egorov_setup();
    let epss = [0.25, 0.125, 0.0625];
    let pts = egorov_sweep(&h, &f, &a, 1.0, &epss, &EgorovSettings { time: 1.0, dt: 1e-2 }).unwrap();
    let ds: Vec<f64> = pts.iter().map(|p| p.defect).collect();
    let (s, _) = loglog_slope(&epss, &ds).unwrap();
    assert!(s >= 1.7, "slope {s}: {ds:?}");
}

#[test]
fn free_motion_egorov_sits_at_the_floor() {
    let (_, _, f, _) = egorov_setup();
    for eps in [0.25, 0.125] {
        let p = Parameters::new(eps, 1.0).unwrap();
        let d = free_egorov_defect(&f, &p, &EgorovSettings { time: 1.0, dt: 1e-2 }).unwrap();
        assert!(d < 1e-5, "{eps}: {d}");
    }
}

#[test]
fn two_dimensional_magnetic_egorov_smoke() {
    let n = 8;
    let g = GridSpec::new(2, n, balanced_length(n)).unwrap();
    let k = 2.0 * PI / g.length;
    let h = Hamiltonian::parse(2, &format!("2 - cos({k}*p1) - cos({k}*p2)")).unwrap();
    let f = gaussian_symbol(&g, [0.0, 0.0], [0.0, 0.0], 1.0);
    let (_, a) = common::trig_field(&g, 0.3, 0.1);
    let p = Parameters::new(0.5, 1.0).unwrap();
    let d0 = egorov_defect(&h, &f, &a, &p, &EgorovSettings { time: 0.0, dt: 1e-2 }).unwrap();
    assert!(d0 < 1e-10);
    let d1 = egorov_defect(&h, &f, &a, &p, &EgorovSettings { time: 0.5, dt: 1e-2 }).unwrap();
    assert!(d1.is_finite() && d1 < 0.1, "{d1}");
}
