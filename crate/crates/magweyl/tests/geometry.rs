//! Integration tests for fields, gauges, circulations and flux expansions.

use magweyl::expr::{position_names, ScalarField};
use magweyl::fit::loglog_slope;
use magweyl::geometry::*;
use proptest::prelude::*;

fn trig_b() -> MagneticField {
    MagneticField::parse_planar("0.6 + 0.3*cos(0.7*x1) * sin(0.4*x2) + 0.1*x2").unwrap()
}

fn probes() -> Vec<Vec<f64>> {
    vec![vec![0.3, -0.7], vec![1.2, 0.4], vec![-2.0, 1.5], vec![0.0, 0.0]]
}

#[test]
fn parameters_are_validated() {
    assert!(Parameters::new(0.5, 1.0).is_ok());
    for (e, l) in [(0.0, 0.5), (1.5, 0.5), (0.5, -0.1), (0.5, 1.1), (f64::NAN, 0.5)] {
        assert!(Parameters::new(e, l).is_err(), "{e} {l}");
    }
}

#[test]
fn fields_are_antisymmetric() {
    let b = trig_b();
    assert_eq!(b.antisymmetry_defect(&probes()), 0.0);
    assert!(MagneticField::zero(1).unwrap().is_zero());
    assert!(MagneticField::constant(0.4).is_constant());
    assert!(!trig_b().is_constant());
}

#[test]
fn transversal_gauge_reproduces_the_field() {
    let b = trig_b();
    let a = transversal_gauge(&b);
    assert!(a.curl_defect(&b, &probes()) < 1e-10);
    // Constant fields have the closed form A = (-b x2 / 2, b x1 / 2).
    let a0 = transversal_gauge(&MagneticField::constant(0.8));
    let mut v = [0.0; 2];
    a0.eval(&[0.5, -1.5], &mut v);
    assert!((v[0] - 0.6).abs() < 1e-13 && (v[1] - 0.2).abs() < 1e-13, "{v:?}");
}

#[test]
fn constant_field_flux_is_signed_area() {
    let a = transversal_gauge(&MagneticField::constant(0.8));
    let (x, y, z) = ([0.0, 0.0], [2.0, 0.0], [0.0, 1.0]);
    assert!((triangle_flux(&a, &x, &y, &z) - 0.8).abs() < 1e-12);
    assert!((triangle_flux(&a, &x, &z, &y) + 0.8).abs() < 1e-12);
}

#[test]
fn flux_is_additive_and_gauge_invariant() {
    let b = trig_b();
    let a = transversal_gauge(&b);
    let chi = GaugeTransform::parse(2, "0.4*sin(x1*x2) + x1^2").unwrap();
    let a2 = apply_gauge(&a, &chi).unwrap();
    let (p, q, r, s) = ([0.1, 0.2], [1.3, -0.4], [0.9, 1.1], [-0.5, 0.8]);
    let whole = triangle_flux(&a, &p, &q, &r) + triangle_flux(&a, &p, &r, &s);
    let split = triangle_flux(&a, &p, &q, &s) + triangle_flux(&a, &q, &r, &s);
    assert!((whole - split).abs() < 1e-11);
    assert!((triangle_flux(&a2, &p, &q, &r) - triangle_flux(&a, &p, &q, &r)).abs() < 1e-11);
}

#[test]
fn circulation_of_gradient_is_potential_difference() {
    let names = position_names(2);
    let chi = ScalarField::parse("0.4*sin(x1*x2) + x1^2", &names).unwrap();
    let grad = VectorPotential::new(vec![chi.partial(0).unwrap(), chi.partial(1).unwrap()], "gradient").unwrap();
    let (x, y) = ([0.2, -0.3], [1.1, 0.9]);
    let expected = chi.eval(&y) - chi.eval(&x);
    assert!((circulation(&grad, &x, &y) - expected).abs() < 1e-12);
    // Circulations are odd under reversal, and scale with ε as ε^{-1}Γ([εx, εy]).
    assert!((circulation(&grad, &y, &x) + expected).abs() < 1e-12);
    let eps = 0.25;
    let e = chi.eval(&[eps * y[0], eps * y[1]]) - chi.eval(&[eps * x[0], eps * x[1]]);
    assert!((scaled_circulation(&grad, eps, &x, &y) - e / eps).abs() < 1e-12);
}

#[test]
fn scaled_flux_agrees_with_area_quadrature() {
    let b = trig_b();
    let a = transversal_gauge_with(&b, 32);
    for eps in [1.0, 0.5, 0.1] {
        let (x, y, z) = ([0.3, -0.2], [1.0, 0.5], [-0.4, 1.2]);
        let line = scaled_flux(&a, &x, &y, &z, eps).unwrap();
        let area = scaled_flux_area(&b, &x, &y, &z, eps, 24);
        assert!((line - area).abs() < 1e-10, "{eps}: {line} vs {area}");
    }
}

#[test]
fn flux_expansion_has_the_right_orders() {
    let b = trig_b();
    let (x, y, z) = ([0.3, -0.2], [1.0, 0.5], [-0.4, 1.2]);
    let terms = flux_expansion_terms(&b, &x, &y, &z, 4).unwrap();
    let yz = y[0] * z[1] - y[1] * z[0];
    assert!((terms[0] - 0.5 * b.b12().eval(&x) * yz).abs() < 1e-14);
    let epss: Vec<f64> = (2..=6).map(|k| 0.5f64.powi(k)).collect();
    for order in 1..=3 {
        let rem: Vec<f64> = epss
            .iter()
            .map(|&e| {
                let exact = scaled_flux_area(&b, &x, &y, &z, e, 24);
                let series: f64 = terms[..order].iter().enumerate().map(|(n, t)| e.powi(n as i32 + 1) * t).sum();
                (exact - series).abs()
            })
            .collect();
        let (slope, _) = loglog_slope(&epss, &rem).unwrap();
        assert!((slope - (order as f64 + 1.0)).abs() < 0.3, "order {order}: slope {slope}");
    }
    assert!(flux_expansion_terms(&b, &x, &y, &z, MAX_FLUX_ORDER + 1).is_err());
}

#[test]
fn omega_is_trivial_in_one_dimension_and_for_zero_field() {
    let p = Parameters::new(0.5, 1.0).unwrap();
    let a1 = VectorPotential::parse(&["0.3*sin(x1) + x1^2"], "probe").unwrap();
    let w = omega_phase(&a1, &[0.3], &[1.0], &[-2.5], &p);
    assert!((w - num_complex::Complex64::new(1.0, 0.0)).norm() < 1e-12);
    let a0 = VectorPotential::zero(2).unwrap();
    assert_eq!(omega_phase(&a0, &[0.3, 0.1], &[1.0, 0.0], &[0.0, 2.0], &p), num_complex::Complex64::new(1.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, .. ProptestConfig::default() })]

    #[test]
    fn constant_field_flux_matches_area(b in -2.0f64..2.0, pts in proptest::array::uniform6(-3.0f64..3.0)) {
        let a = transversal_gauge(&MagneticField::constant(b));
        let (x, y, z) = ([pts[0], pts[1]], [pts[2], pts[3]], [pts[4], pts[5]]);
        let area = 0.5 * ((y[0] - x[0]) * (z[1] - x[1]) - (y[1] - x[1]) * (z[0] - x[0]));
        prop_assert!((triangle_flux(&a, &x, &y, &z) - b * area).abs() < 1e-10 * (1.0 + area.abs()));
    }

    #[test]
    fn flux_changes_sign_under_orientation(pts in proptest::array::uniform6(-2.0f64..2.0)) {
        let a = transversal_gauge(&trig_b());
        let (x, y, z) = ([pts[0], pts[1]], [pts[2], pts[3]], [pts[4], pts[5]]);
        let f1 = triangle_flux(&a, &x, &y, &z);
        let f2 = triangle_flux(&a, &y, &z, &x);
        let f3 = triangle_flux(&a, &x, &z, &y);
        prop_assert!((f1 - f2).abs() < 1e-11);
        prop_assert!((f1 + f3).abs() < 1e-11);
    }
}
