//! Integration tests for quantization, dequantization, Weyl systems and
//! Wigner transforms.

mod common;

use std::f64::consts::PI;

use common::{gaussian_symbol, rel_dist, trig_field, trig_symbol};
use magweyl::expr::{position_names, ScalarField};
use magweyl::geometry::{apply_gauge, transversal_gauge, GaugeTransform, MagneticField, Parameters, VectorPotential};
use magweyl::grid::{sample_symbol, GridSpec, SymbolField, WaveFunction};
use magweyl::linalg::{self, CMatrix};
use magweyl::quantizer::*;
use magweyl::C64;
use proptest::prelude::*;

fn sup(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn pot1() -> VectorPotential {
    VectorPotential::parse(&["0.3*sin(0.5*x1) + 0.2*x1"], "probe").unwrap()
}

#[test]
fn constant_one_quantizes_to_identity() {
    for (dim, n, eps) in [(1, 16, 0.5), (2, 8, 0.5), (1, 16, 1.0)] {
        let grid = GridSpec::new(dim, n, 9.0).unwrap();
        let one = sample_symbol(&|_: &[f64], _: &[f64]| C64::new(1.0, 0.0), &grid);
        let (a, label) = if dim == 1 {
            (pot1(), "probe")
        } else {
            (transversal_gauge(&MagneticField::constant(0.7)), "transversal")
        };
        let p = Parameters::new(eps, 1.0).unwrap();
        let k = quantize(&one, &a, &p).unwrap();
        let id = OperatorKernel::identity(grid, p, label).unwrap();
        assert!(sup(&(&k.matrix - &id.matrix)) / sup(&id.matrix) < 1e-10);
        let back = dequantize(&id, &a).unwrap();
        assert!(back.sup_dist(&one).unwrap() < 1e-10);
    }
}

#[test]
fn momentum_symbol_is_spectral_derivative() {
    let n = 16;
    let grid = GridSpec::new(1, n, 8.0).unwrap();
    let f = sample_symbol(&|_: &[f64], k: &[f64]| C64::new(k[0], 0.0), &grid);
    let p = Parameters::new(1.0, 0.0).unwrap();
    let a = VectorPotential::zero(1).unwrap();
    let t = quantize(&f, &a, &p).unwrap().operator();
    let h = grid.hilbert(1.0).unwrap();
    let oracle = CMatrix::from_fn(n, n, |i, j| {
        let mut s = C64::new(0.0, 0.0);
        for k in 0..n {
            let xi = grid.xi(k);
            s += C64::from_polar(xi, xi * (h.node(i) - h.node(j)));
        }
        s / n as f64
    });
    assert!(sup(&(&t - &oracle)) < 1e-9, "{}", sup(&(&t - &oracle)));
}

#[test]
fn real_symbols_give_hermitian_operators() {
    let grid = GridSpec::new(2, 8, 8.0).unwrap();
    let f = gaussian_symbol(&grid, [0.3, -0.2], [0.5, 0.1], 1.0);
    let (_, a) = trig_field(&grid, 0.5, 0.2);
    let p = Parameters::new(0.5, 1.0).unwrap();
    let k = quantize(&f, &a, &p).unwrap();
    assert!(linalg::hermiticity_defect(&k.operator()) < 1e-10);
}

#[test]
fn round_trip_on_gaussian_and_trig_symbols() {
    let grid = GridSpec::new(2, 8, 8.0).unwrap();
    let (_, a) = trig_field(&grid, 0.5, 0.2);
    let p = Parameters::new(0.5, 1.0).unwrap();
    let f = trig_symbol(
        &grid,
        &[
            ([1, 0], [0, 2], C64::new(0.5, 0.2)),
            ([-2, 1], [1, -1], C64::new(-0.3, 0.1)),
            ([0, 0], [0, 0], C64::new(1.0, 0.0)),
        ],
    );
    let back = dequantize(&quantize(&f, &a, &p).unwrap(), &a).unwrap();
    assert!(back.sup_dist(&f).unwrap() < 1e-10);
}

#[test]
fn dequantized_adjoint_is_complex_conjugate() {
    let grid = GridSpec::new(1, 16, 10.0).unwrap();
    let f = trig_symbol(
        &grid,
        &[([1, 0], [2, 0], C64::new(0.4, 0.3)), ([3, 0], [-1, 0], C64::new(0.1, -0.7))],
    );
    let a = pot1();
    let p = Parameters::new(0.5, 0.8).unwrap();
    let k = quantize(&f, &a, &p).unwrap();
    let g = dequantize(&k.adjoint(), &a).unwrap();
    assert!(g.sup_dist(&f.conj()).unwrap() < 1e-10);
}

#[test]
fn composition_identities() {
    let grid = GridSpec::new(1, 16, 10.0).unwrap();
    let a = pot1();
    let p = Parameters::new(0.5, 1.0).unwrap();
    let k1 = quantize(&gaussian_symbol(&grid, [0.5, 0.0], [0.2, 0.0], 1.0), &a, &p).unwrap();
    let k2 = quantize(&gaussian_symbol(&grid, [-0.5, 0.0], [0.0, 0.0], 0.8), &a, &p).unwrap();
    let k3 = quantize(&gaussian_symbol(&grid, [0.0, 0.0], [-0.4, 0.0], 1.2), &a, &p).unwrap();
    let id = OperatorKernel::identity(grid, p, "probe").unwrap();
    let ki = compose_kernels(&k1, &id).unwrap();
    assert!(sup(&(&ki.matrix - &k1.matrix)) < 1e-12 * sup(&k1.matrix));
    let l = compose_kernels(&compose_kernels(&k1, &k2).unwrap(), &k3).unwrap();
    let r = compose_kernels(&k1, &compose_kernels(&k2, &k3).unwrap()).unwrap();
    assert!(sup(&(&l.matrix - &r.matrix)) < 1e-10 * sup(&l.matrix));
    let adj = compose_kernels(&k1, &k2).unwrap().adjoint();
    let rev = compose_kernels(&k2.adjoint(), &k1.adjoint()).unwrap();
    assert!(sup(&(&adj.matrix - &rev.matrix)) < 1e-12 * sup(&adj.matrix));
}

#[test]
fn composition_rejects_mismatched_gauges() {
    let grid = GridSpec::new(1, 16, 10.0).unwrap();
    let p = Parameters::new(0.5, 1.0).unwrap();
    let f = gaussian_symbol(&grid, [0.0; 2], [0.0; 2], 1.0);
    let k1 = quantize(&f, &pot1(), &p).unwrap();
    let k2 = quantize(&f, &VectorPotential::zero(1).unwrap(), &p).unwrap();
    assert!(compose_kernels(&k1, &k2).is_err());
    assert!(dequantize(&k1, &VectorPotential::zero(1).unwrap()).is_err());
}

fn covariance_defect(f: &SymbolField, a: &VectorPotential, chi_text: &str, p: &Parameters) -> f64 {
    let chi = GaugeTransform::parse(f.grid.dim, chi_text).unwrap();
    let a2 = apply_gauge(a, &chi).unwrap();
    let k1 = quantize(f, a, p).unwrap();
    let k2 = quantize(f, &a2, p).unwrap();
    let h = f.grid.hilbert(p.eps).unwrap();
    let chi_field = ScalarField::parse(chi_text, &position_names(f.grid.dim)).unwrap();
    let u = gauge_unitary(&chi_field, p, &h);
    let conj = conjugate_diagonal(&k1, &u, a2.label());
    sup(&(&conj.matrix - &k2.matrix))
}

#[test]
fn gauge_covariance_in_one_and_two_dimensions() {
    let g1 = GridSpec::new(1, 16, 10.0).unwrap();
    let f1 = gaussian_symbol(&g1, [0.4, 0.0], [0.3, 0.0], 1.0);
    let p = Parameters::new(0.5, 1.0).unwrap();
    assert!(covariance_defect(&f1, &pot1(), "0.2*cos(0.6283185307179586*x1) + 0.1*sin(1.2566370614359172*x1)", &p) < 1e-9);
    let g2 = GridSpec::new(2, 8, 8.0).unwrap();
    let f2 = gaussian_symbol(&g2, [0.4, -0.3], [0.3, 0.0], 1.0);
    let a2 = transversal_gauge(&MagneticField::constant(0.6));
    assert!(covariance_defect(&f2, &a2, "0.3*sin(0.7853981633974483*x1)*cos(0.7853981633974483*x2)", &p) < 1e-9);
}

#[test]
fn weyl_system_is_unitary_and_composes() {
    let grid = GridSpec::new(1, 16, 10.0).unwrap();
    let p = Parameters::new(0.5, 1.0).unwrap();
    let h = grid.hilbert(p.eps).unwrap();
    let a = pot1();
    // Localised well inside the cell: translations and momentum phases are
    // only compatible up to the torus boundary.
    let u = WaveFunction::gaussian(h, &[0.1], &[0.4], 1.0);
    let w0 = weyl_system_apply(&[0.0], &[0.0], &a, &p, &u).unwrap();
    assert!(rel_dist(&w0.values, &u.values) < 1e-14);
    let (x, xi) = (2.0 * h.spacing, 0.7);
    let (y, eta) = (-3.0 * h.spacing, -0.2);
    let wy = weyl_system_apply(&[y], &[eta], &a, &p, &u).unwrap();
    assert!((wy.norm() - u.norm()).abs() < 1e-12);
    let lhs = weyl_system_apply(&[x], &[xi], &a, &p, &wy).unwrap();
    let sum = weyl_system_apply(&[x + y], &[xi + eta], &a, &p, &u).unwrap();
    let rhs: Vec<C64> = (0..h.size())
        .map(|i| weyl_composition_phase(&[x], &[xi], &[y], &[eta], &a, &p, &[h.node(i)]) * sum.values[i])
        .collect();
    assert!(rel_dist(&lhs.values, &rhs) < 1e-9, "{}", rel_dist(&lhs.values, &rhs));
    assert!(weyl_system_apply(&[0.3 * h.spacing], &[0.0], &a, &p, &u).is_err());
}

fn harmonic_grid() -> GridSpec {
    GridSpec::new(1, 64, 32.0).unwrap()
}

fn first_excited(grid: &GridSpec) -> WaveFunction {
    let h = grid.hilbert(1.0).unwrap();
    WaveFunction::from_fn(h, |x| C64::new(x[0] * (-x[0] * x[0] / 4.0).exp(), 0.0))
}

#[test]
fn harmonic_oscillator_wigner_matches_derived_form() {
    let grid = harmonic_grid();
    let u = first_excited(&grid);
    let p = Parameters::new(1.0, 0.0).unwrap();
    let a = VectorPotential::zero(1).unwrap();
    let w = wigner(&u, &u, &a, &p).unwrap();
    // The Wigner function of x e^{-x²/4} in this normalisation.
    let oracle = sample_symbol(
        &|x: &[f64], k: &[f64]| {
            let (x, k) = (x[0], k[0]);
            C64::new((8.0 * PI).sqrt() * (x * x + 4.0 * k * k - 1.0) * (-x * x / 2.0 - 2.0 * k * k).exp(), 0.0)
        },
        &grid,
    );
    assert!(w.sup_dist(&oracle).unwrap() < 1e-6, "{}", w.sup_dist(&oracle).unwrap());
}

#[test]
fn wigner_marginal_and_norm() {
    let grid = harmonic_grid();
    let u = first_excited(&grid);
    let v = WaveFunction::gaussian(u.grid, &[0.5], &[0.3], 1.3);
    let p = Parameters::new(1.0, 0.0).unwrap();
    let a = VectorPotential::zero(1).unwrap();
    let w = wigner(&u, &u, &a, &p).unwrap();
    let np = grid.n_pos();
    for ix in 0..np {
        let m: C64 = (0..np).map(|k| w.at(ix, k)).sum::<C64>() * grid.dxi();
        let target = 2.0 * PI * u.values[ix].norm_sqr();
        assert!((m - target).norm() < 1e-8, "{ix}: {m} vs {target}");
    }
    let wuv = wigner(&u, &v, &a, &p).unwrap();
    let expected = (2.0 * PI) .sqrt() * u.norm() * v.norm();
    assert!((wuv.l2_norm() - expected).abs() < 1e-9 * expected, "{} vs {expected}", wuv.l2_norm());
}

#[test]
fn expectation_paths_agree() {
    for dim in [1usize, 2] {
        let (grid, a, p) = if dim == 1 {
            (GridSpec::new(1, 16, 10.0).unwrap(), pot1(), Parameters::new(0.5, 1.0).unwrap())
        } else {
            let g = GridSpec::new(2, 8, 8.0).unwrap();
            let (_, a) = trig_field(&g, 0.5, 0.2);
            (g, a, Parameters::new(0.5, 1.0).unwrap())
        };
        let h = grid.hilbert(p.eps).unwrap();
        let f = gaussian_symbol(&grid, [0.3, -0.2], [0.2, 0.1], 1.1);
        let q = vec![0.2; dim];
        let u = WaveFunction::gaussian(h, &q, &vec![0.3; dim], 1.5);
        let v = WaveFunction::gaussian(h, &vec![-0.1; dim], &vec![0.1; dim], 1.2);
        let direct = expectation(&f, &u, &v, &a, &p).unwrap();
        let phase = expectation_via_wigner(&f, &u, &v, &a, &p).unwrap();
        assert!((direct - phase).norm() < 1e-8 * direct.norm().max(1e-3), "{direct} vs {phase}");
        let one = sample_symbol(&|_: &[f64], _: &[f64]| C64::new(1.0, 0.0), &grid);
        let e1 = expectation(&one, &u, &v, &a, &p).unwrap();
        assert!((e1 - v.inner(&u)).norm() < 1e-10);
        let uu = expectation(&f, &u, &u, &a, &p).unwrap();
        assert!(uu.im.abs() < 1e-10);
    }
}

#[test]
fn operator_norm_respects_fourier_bound() {
    let grid = GridSpec::new(1, 16, 10.0).unwrap();
    let p = Parameters::new(0.5, 1.0).unwrap();
    for s in [0.7, 1.0, 1.5] {
        let f = gaussian_symbol(&grid, [0.5, 0.0], [0.0, 0.0], s);
        let k = quantize(&f, &pot1(), &p).unwrap();
        assert!(k.norm() <= norm_bound(&f) * (1.0 + 1e-12));
    }
}

#[test]
fn kernel_serialises() {
    let grid = GridSpec::new(1, 8, 6.0).unwrap();
    let p = Parameters::new(1.0, 1.0).unwrap();
    let k = quantize(&gaussian_symbol(&grid, [0.0; 2], [0.0; 2], 1.0), &pot1(), &p).unwrap();
    let text = serde_json::to_string(&k).unwrap();
    let back: OperatorKernel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, k);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn round_trip_band_limited(
        coefs in proptest::collection::vec((-6i32..=6, -6i32..=6, -1.0f64..1.0, -1.0f64..1.0), 1..4),
        amp in -0.5f64..0.5,
        eps_pow in 0u32..3,
    ) {
        let grid = GridSpec::new(1, 16, 10.0).unwrap();
        let modes: Vec<_> = coefs.iter().map(|&(mx, mk, re, im)| ([mx, 0], [mk, 0], C64::new(re, im))).collect();
        let f = trig_symbol(&grid, &modes);
        let a = VectorPotential::parse(&[&format!("{amp}*cos(0.6*x1)")], "random").unwrap();
        let p = Parameters::new(0.5f64.powi(eps_pow as i32 + 1), 1.0).unwrap();
        let back = dequantize(&quantize(&f, &a, &p).unwrap(), &a).unwrap();
        prop_assert!(back.sup_dist(&f).unwrap() < 1e-10);
    }

    #[test]
    fn hermitian_for_real_symbols(x0 in -1.0f64..1.0, k0 in -1.0f64..1.0, s in 0.8f64..1.4, lambda in 0.0f64..1.0) {
        let grid = GridSpec::new(1, 16, 10.0).unwrap();
        let f = gaussian_symbol(&grid, [x0, 0.0], [k0, 0.0], s);
        let p = Parameters::new(0.5, lambda).unwrap();
        let k = quantize(&f, &pot1(), &p).unwrap();
        prop_assert!(linalg::hermiticity_defect(&k.operator()) < 1e-10);
    }
}

#[test]
fn wigner_is_dequantized_projector_when_grids_coincide() {
    let grid = GridSpec::new(1, 32, 16.0).unwrap();
    let p = Parameters::new(1.0, 1.0).unwrap();
    let h = grid.hilbert(1.0).unwrap();
    let a = VectorPotential::parse(&["0.3*sin(0.39269908169872414*x1)"], "periodic").unwrap();
    let u = WaveFunction::gaussian(h, &[0.5], &[0.3], 1.2);
    let v = WaveFunction::gaussian(h, &[-0.4], &[-0.2], 0.9);
    // The operator v ↦ ⟨v, ·⟩ u on the weighted grid.
    let op = CMatrix::from_fn(h.size(), h.size(), |i, j| u.values[i] * v.values[j].conj() * h.weight());
    let k = OperatorKernel::from_operator(grid, h, "periodic", p, op);
    let w1 = dequantize(&k, &a).unwrap();
    let w2 = wigner(&u, &v, &a, &p).unwrap();
    assert!(w1.sup_dist(&w2).unwrap() < 1e-9 * w2.sup_norm(), "{}", w1.sup_dist(&w2).unwrap());
}
