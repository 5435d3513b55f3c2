//! Bloch bands, Zak transform, band geometry and effective dynamics.

use std::f64::consts::PI;

use magweyl::bloch::{
    band_point, band_structure, berry_data, cutoff_convergence, effective_hamiltonian, fiber_hamiltonian,
    free_band_geometry,
    hall_current, inverse_zak, macroscopic_flow, parse_potential, position_bracket, zak_at, zak_transform,
    Lattice, PeriodicPotential, PlaneWaveBasis, PotentialCoefficient, SupercellFunction,
};
use magweyl::expr::ScalarField;
use magweyl::geometry::{MagneticField, Parameters};
use magweyl::linalg::{hermitian_eig, hermiticity_defect};
use magweyl::semiclassics::magnetic_flow;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

/// Square-lattice potential with a gapped lowest band and broken
/// inversion symmetry (so the curvature is not identically zero).
fn chiral_potential() -> PeriodicPotential {
    PeriodicPotential::cosines(
        2,
        &[([1, 0], 2.0, PI), ([0, 1], 2.0, PI), ([1, 1], 1.0, -PI / 2.0)],
    )
    .unwrap()
}

fn zero_field_and_parameters(eps: f64, lambda: f64) -> (MagneticField, Parameters) {
    (MagneticField::zero(2).unwrap(), Parameters { eps, lambda })
}

fn wrapped_distance(lat: &Lattice, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (f, _) = lat.fold(&diff);
    f[..lat.dim()].iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn zak_transform_is_unitary_invertible_and_equivariant() {
    for (dim, res, p) in [(1usize, 6usize, 5usize), (2, 4, 3)] {
        let lat = if dim == 1 {
            Lattice::square(1, 1.3, res).unwrap()
        } else {
            Lattice::new(&[vec![1.0, 0.0], vec![0.4, 0.9]], res).unwrap()
        };
        let psi = SupercellFunction::from_fn(&lat, res, p, |r| {
            let s: f64 = r.iter().map(|x| x * x).sum();
            C64::from_polar((-0.3 * s).exp(), 0.7 * r[0] + r.iter().sum::<f64>().sin())
        })
        .unwrap();
        let z = zak_transform(&psi, &lat).unwrap();
        assert!((z.fibered_norm() - psi.norm(&lat)).abs() <= 1e-10 * psi.norm(&lat));
        let back = inverse_zak(&z);
        let err = back
            .values
            .iter()
            .zip(&psi.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "inverse error {err}");

        // Boundary k-points m_j = 0 (θ_j = −½ for even R): shift by −e*_j.
        for ik in 0..lat.n_k() {
            let theta = lat.reduced(ik);
            for j in 0..dim {
                if (theta[j] + 0.5).abs() > 1e-12 {
                    continue;
                }
                let k = lat.k_point(ik);
                let shifted: Vec<f64> = (0..dim).map(|l| k[l] - lat.dual(j)[l]).collect();
                let lhs = zak_at(&psi, &lat, &shifted).unwrap();
                let fiber = z.fiber(ik);
                for (iy, value) in lhs.iter().enumerate() {
                    let yi = if dim == 1 { [iy, 0] } else { [iy / p, iy % p] };
                    let s = [yi[0] as f64 / p as f64, yi[1] as f64 / p as f64];
                    let y = lat.position(&s);
                    let phase: f64 = (0..dim).map(|l| lat.dual(j)[l] * y[l]).sum();
                    let rhs = C64::from_polar(1.0, phase) * fiber[iy];
                    assert!((value - rhs).norm() <= 1e-9, "equivariance defect {}", (value - rhs).norm());
                }
            }
        }
    }
}

#[test]
fn incommensurate_supercell_is_rejected() {
    let lat = Lattice::square(2, 1.0, 4).unwrap();
    let psi = SupercellFunction::from_fn(&lat, 3, 2, |_| C64::new(1.0, 0.0)).unwrap();
    let err = zak_transform(&psi, &lat).unwrap_err();
    assert!(err.to_string().contains("incommensurate"));
}

#[test]
fn free_fibers_are_diagonal_folded_bands() {
    let lat = Lattice::square(2, 1.0, 5).unwrap();
    let v = PeriodicPotential::zero(2).unwrap();
    let basis = PlaneWaveBasis::new(2, 2).unwrap();
    let sol = band_structure(&v, &lat, 2, 6).unwrap();
    for ik in 0..lat.n_k() {
        let k = lat.k_point(ik);
        let h = fiber_hamiltonian(&k, &v, &lat, 2).unwrap();
        let mut folded: Vec<f64> = basis
            .indices()
            .iter()
            .map(|n| {
                let g = lat.dual_point(n);
                0.5 * ((k[0] + g[0]).powi(2) + (k[1] + g[1]).powi(2))
            })
            .collect();
        folded.sort_by(f64::total_cmp);
        for a in 0..h.nrows() {
            for b in 0..h.ncols() {
                if a != b {
                    assert_eq!(h[(a, b)], C64::new(0.0, 0.0));
                }
            }
        }
        for b in 0..6 {
            assert_eq!(sol.energies[ik][b], folded[b], "band {b} at k-point {ik}");
        }
    }
    let ground = sol.band(0).unwrap();
    let min = ground.iter().cloned().fold(f64::INFINITY, f64::min);
    let ik0 = (0..lat.n_k()).find(|&ik| lat.k_point(ik) == [0.0, 0.0]).unwrap();
    assert_eq!(min, 0.0);
    assert_eq!(ground[ik0], 0.0);
}

#[test]
fn fiber_hamiltonian_is_hermitian() {
    let lat = Lattice::new(&[vec![1.0, 0.2], vec![-0.3, 1.1]], 3).unwrap();
    let v = chiral_potential();
    for k in [[0.3, -1.2], [2.0, 0.7]] {
        let h = fiber_hamiltonian(&k, &v, &lat, 3).unwrap();
        assert!(hermiticity_defect(&h) <= 1e-14);
    }
    assert!(fiber_hamiltonian(&[0.0], &PeriodicPotential::zero(1).unwrap(), &Lattice::square(1, 1.0, 3).unwrap(), 0).is_err());
}

#[test]
fn mathieu_gap_matches_degenerate_perturbation_theory() {
    let v = 0.05;
    let lat = Lattice::square(1, 1.0, 8).unwrap();
    let pot = PeriodicPotential::mathieu(v).unwrap();
    let h = fiber_hamiltonian(&[PI], &pot, &lat, 6).unwrap();
    let (w, _) = hermitian_eig(&h).unwrap();
    let gap = w[1] - w[0];
    assert!((gap - 2.0 * v).abs() <= 0.1 * 2.0 * v, "gap {gap}");
}

#[test]
fn bands_are_periodic_ascending_and_continuous() {
    let v = chiral_potential();
    let coarse = band_structure(&v, &Lattice::square(2, 1.0, 7).unwrap(), 5, 3).unwrap();
    assert!(coarse.periodicity_defect().unwrap() <= 1e-9);
    for e in &coarse.energies {
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
    }
    for ik in 0..coarse.lattice.n_k() {
        for b in 0..3 {
            let c: Vec<C64> = coarse.vectors[ik].column(b).iter().copied().collect();
            let norm: f64 = c.iter().map(|x| x.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            let pivot = c[coarse.gauge[ik].pivots[b]];
            assert!(pivot.im == 0.0 && pivot.re > 0.0);
        }
    }
    // A gapped band is continuous: halving the spacing halves the largest
    // adjacent jump (up to curvature corrections).
    let fine = band_structure(&v, &Lattice::square(2, 1.0, 14).unwrap(), 5, 1).unwrap();
    let (jc, jf) = (coarse.max_adjacent_jump(0).unwrap(), fine.max_adjacent_jump(0).unwrap());
    assert!(jf < 0.65 * jc, "jumps {jc} -> {jf}");
}

#[test]
fn lowest_band_converges_in_the_cutoff() {
    let lat = Lattice::square(2, 1.0, 5).unwrap();
    let defect = cutoff_convergence(&chiral_potential(), &lat, 3).unwrap();
    assert!(defect < 1e-6, "cutoff defect {defect}");
}

#[test]
fn chern_number_vanishes_and_curvature_is_odd() {
    let lat = Lattice::square(2, 1.0, 9).unwrap();
    let v = chiral_potential();
    assert!(!v.is_inversion_symmetric());
    let sol = band_structure(&v, &lat, 4, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    assert_eq!(berry.chern, 0);
    assert!(berry.chern_raw.abs() <= 1e-9);
    assert!(berry.curvature_integral(&lat).abs() <= 1e-6);
    let peak = berry.curvature.iter().map(|o| o.abs()).fold(0.0, f64::max);
    assert!(peak > 1e-3, "curvature vanishes identically ({peak}), the check would be vacuous");
    assert!(berry.time_reversal_defect(&lat) <= 1e-8);
    for m in &berry.rammal_wilkinson {
        assert!(m[0][1].is_finite() && m[0][1] == -m[1][0]);
    }
    for a in &berry.connection {
        assert!(a[0].is_finite() && a[1].is_finite());
    }
}

#[test]
fn plaquette_curvature_converges_to_sum_over_states() {
    // A deep potential keeps the curvature smooth on these grids.
    let v = PeriodicPotential::cosines(2, &[([1, 0], 6.0, PI), ([0, 1], 6.0, PI), ([1, 1], 3.0, -PI / 2.0)]).unwrap();
    let mut errors = Vec::new();
    let mut abs_integrals = Vec::new();
    for res in [12usize, 24] {
        let lat = Lattice::square(2, 1.0, res).unwrap();
        let sol = band_structure(&v, &lat, 3, 2).unwrap();
        let berry = berry_data(&sol, 0, None).unwrap();
        let mut worst: f64 = 0.0;
        for ip in 0..lat.n_k() {
            let k = lat.to_cartesian(&lat.plaquette_centre(ip));
            let exact = band_point(&v, &lat, &sol.basis, 0, &k).unwrap().omega12;
            worst = worst.max((berry.curvature[ip] - exact).abs());
        }
        errors.push(worst);
        abs_integrals.push(berry.curvature_abs_integral(&lat));
    }
    // Flux averages over a plaquette differ from centre values at O(h²).
    assert!(errors[1] < 0.35 * errors[0], "plaquette errors {errors:?}");
    let change = (abs_integrals[1] - abs_integrals[0]).abs() / abs_integrals[1];
    assert!(change < 0.05, "∫|Ω| changed by {change}");
}

#[test]
fn free_band_geometry_is_trivial() {
    let lat = Lattice::square(2, 1.0, 7).unwrap();
    let v = PeriodicPotential::zero(2).unwrap();
    let sol = band_structure(&v, &lat, 2, 2).unwrap();
    // Inside the zone the free band has no geometry at all.
    for k in [[0.4, -1.3], [2.9, 0.1], [-1.0, -2.5]] {
        let p = band_point(&v, &lat, &sol.basis, 0, &k).unwrap();
        assert_eq!((p.omega12, p.m12), (0.0, 0.0));
        assert!((p.gradient[0] - k[0]).abs() < 1e-14 && (p.gradient[1] - k[1]).abs() < 1e-14);
    }
    let free = free_band_geometry(&sol, 0).unwrap();
    assert!(free.curvature.iter().all(|&o| o == 0.0) && free.chern == 0);
    // The lowest free band touches the next one on the zone boundary;
    // the lattice construction detects the crossing between grid points.
    let err = berry_data(&sol, 0, None).unwrap_err().to_string();
    assert!(err.contains("between grid points"), "{err}");
    assert!(free_band_geometry(&band_structure(&chiral_potential(), &lat, 2, 2).unwrap(), 0).is_err());

    let lat1 = Lattice::square(1, 1.0, 7).unwrap();
    let sol1 = band_structure(&PeriodicPotential::mathieu(0.2).unwrap(), &lat1, 4, 2).unwrap();
    let berry1 = berry_data(&sol1, 0, None).unwrap();
    assert!(berry1.curvature.is_empty());
    assert_eq!(berry1.omega(0, 0, 0), 0.0);
    assert!(berry1.rammal_wilkinson.iter().all(|m| m[0][0] == 0.0));
}

#[test]
fn gap_violation_lists_k_points() {
    // An even grid contains the zone boundary, where free bands cross.
    let lat = Lattice::square(2, 1.0, 4).unwrap();
    let sol = band_structure(&PeriodicPotential::zero(2).unwrap(), &lat, 2, 2).unwrap();
    let err = berry_data(&sol, 0, None).unwrap_err().to_string();
    assert!(err.contains("gap condition") && err.contains("θ=(-0.5000"), "{err}");
}

#[test]
fn effective_hamiltonian_limits() {
    let lat = Lattice::square(2, 1.0, 7).unwrap();
    let sol = band_structure(&chiral_potential(), &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let (b0, p) = zero_field_and_parameters(0.1, 0.0);
    let eff = effective_hamiltonian(&sol, 0, &b0, &ScalarField::zero(), &berry, p).unwrap();
    let r = [0.3, -0.2];
    for ik in 0..lat.n_k() {
        assert_eq!(eff.h0_on_grid(ik, &r), sol.energies[ik][0]);
        assert_eq!(eff.h1_on_grid(ik, &r), 0.0);
    }

    let b = MagneticField::parse_planar("0.5 + 0.1*cos(x1)").unwrap();
    let phi = parse_potential(2, "0.2*sin(x1) + 0.1*x2").unwrap();
    for eps in [1e-2, 1e-4, 1e-6] {
        let eff = effective_hamiltonian(&sol, 0, &b, &phi, &berry, Parameters { eps, lambda: 1.0 }).unwrap();
        let worst = (0..lat.n_k())
            .map(|ik| (eff.h_sc_on_grid(ik, &r) - eff.h0_on_grid(ik, &r)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 10.0 * eps, "h_sc − h0 = {worst} at ε = {eps}");
        assert!((0..lat.n_k()).all(|ik| eff.h1_on_grid(ik, &r).is_finite()));
    }
    // Grid values agree with the direct evaluation.
    let eff = effective_hamiltonian(&sol, 0, &b, &phi, &berry, Parameters { eps: 0.3, lambda: 1.0 }).unwrap();
    for ik in [0, 11, 30] {
        let k = lat.k_point(ik);
        assert!((eff.h_sc(&k, &r).unwrap() - eff.h_sc_on_grid(ik, &r)).abs() < 1e-10);
    }
}

#[test]
fn classical_limit_reduces_to_the_magnetic_flow() {
    let lat = Lattice::square(2, 1.0, 7).unwrap();
    let v = PeriodicPotential::cosines(2, &[([1, 0], 0.3, PI), ([1, 1], 0.2, -PI / 2.0)]).unwrap();
    let sol = band_structure(&v, &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let b = MagneticField::constant(0.7);
    let phi = parse_potential(2, "0.5*cos(0.3*x1) + 0.2*x2").unwrap();
    let eff = effective_hamiltonian(&sol, 0, &b, &phi, &berry, Parameters { eps: 0.0, lambda: 1.0 }).unwrap();
    let (r0, k0) = ([0.1, -0.4], [1.5, 2.5]);
    let (t, dt) = (5.0, 0.01);
    let macro_traj = macroscopic_flow(&eff, &r0, &k0, t, dt).unwrap();
    let classical = magnetic_flow(&eff.leading(), &b, 1.0, &r0, &k0, t, dt).unwrap();
    assert_eq!(macro_traj.times.len(), classical.times.len());
    let mut worst: f64 = 0.0;
    for (a, c) in macro_traj.points.iter().zip(&classical.points) {
        let dr = ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt();
        worst = worst.max(dr).max(wrapped_distance(&lat, &a[2..], &c[2..]));
    }
    assert!(worst <= 1e-8, "ε = 0 deviation {worst}");
    // The quasi-momentum stays on the torus.
    for z in &macro_traj.points {
        let th = lat.to_reduced(&z[2..]);
        assert!(th.iter().all(|t| (-0.5..0.5).contains(t)));
    }
}

#[test]
fn free_band_cyclotron_orbit() {
    let lat = Lattice::square(2, 1.0, 7).unwrap();
    let sol = band_structure(&PeriodicPotential::zero(2).unwrap(), &lat, 1, 2).unwrap();
    let berry = free_band_geometry(&sol, 0).unwrap();
    let bval = 1.3;
    let b = MagneticField::constant(bval);
    let eff = effective_hamiltonian(&sol, 0, &b, &ScalarField::zero(), &berry, Parameters { eps: 0.2, lambda: 1.0 })
        .unwrap();
    let (r0, k0) = ([0.5, -0.2], [0.6, 0.2]);
    let period = 2.0 * PI / bval;
    let steps = 2000;
    let traj = macroscopic_flow(&eff, &r0, &k0, period, period / steps as f64).unwrap();
    let radius = (k0[0] * k0[0] + k0[1] * k0[1]).sqrt() / bval;
    let centre = [r0[0] + k0[1] / bval, r0[1] - k0[0] / bval];
    for z in &traj.points {
        let rho = ((z[0] - centre[0]).powi(2) + (z[1] - centre[1]).powi(2)).sqrt();
        assert!((rho - radius).abs() <= 1e-5, "radius {rho} vs {radius}");
    }
    let end = traj.endpoint();
    let closure = ((end[0] - r0[0]).powi(2) + (end[1] - r0[1]).powi(2)).sqrt();
    assert!(closure <= 1e-5, "orbit does not close after one period: {closure}");
}

#[test]
fn free_drift_without_fields() {
    let lat = Lattice::square(2, 1.0, 7).unwrap();
    let sol = band_structure(&chiral_potential(), &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let (b, p) = zero_field_and_parameters(0.5, 1.0);
    let eff = effective_hamiltonian(&sol, 0, &b, &ScalarField::zero(), &berry, p).unwrap();
    let (r0, k0) = ([0.0, 0.0], [0.7, -1.1]);
    let traj = macroscopic_flow(&eff, &r0, &k0, 1.0, 0.05).unwrap();
    let v = eff.band_point(&k0).unwrap().gradient;
    let end = traj.endpoint();
    assert!((end[2] - k0[0]).abs() < 1e-12 && (end[3] - k0[1]).abs() < 1e-12);
    assert!((end[0] - v[0]).abs() < 1e-10 && (end[1] - v[1]).abs() < 1e-10);
}

#[test]
fn positions_do_not_commute() {
    let lat = Lattice::square(2, 1.0, 9).unwrap();
    let sol = band_structure(&chiral_potential(), &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let (b, _) = zero_field_and_parameters(0.0, 0.0);
    let eps = 0.01;
    let eff = effective_hamiltonian(&sol, 0, &b, &ScalarField::zero(), &berry, Parameters { eps, lambda: 1.0 }).unwrap();
    let k0 = [1.9, 0.8];
    let omega = eff.omega12(&k0);
    assert!(omega.abs() > 1e-3);
    let bracket = position_bracket(&eff, &[0.0, 0.0], &k0, 1e-4, 1e-3).unwrap();
    let target = -eps * omega;
    assert!((bracket - target).abs() <= 0.1 * target.abs(), "{{r1, r2}} = {bracket}, −εΩ = {target}");
}

#[test]
fn singular_symplectic_form_is_reported() {
    let lat = Lattice::square(2, 1.0, 9).unwrap();
    let sol = band_structure(&chiral_potential(), &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let k0 = [1.9, 0.8];
    let probe = effective_hamiltonian(
        &sol,
        0,
        &MagneticField::zero(2).unwrap(),
        &ScalarField::zero(),
        &berry,
        Parameters { eps: 1.0, lambda: 1.0 },
    )
    .unwrap();
    let b = MagneticField::constant(-1.0 / probe.omega12(&k0));
    let eff = effective_hamiltonian(&sol, 0, &b, &ScalarField::zero(), &berry, Parameters { eps: 1.0, lambda: 1.0 }).unwrap();
    let err = macroscopic_flow(&eff, &[0.0, 0.0], &k0, 1.0, 0.1).unwrap_err().to_string();
    assert!(err.contains("singular"), "{err}");
}

#[test]
fn hall_current_of_a_filled_band() {
    let lat = Lattice::square(2, 1.0, 9).unwrap();
    let sol = band_structure(&chiral_potential(), &lat, 3, 2).unwrap();
    let berry = berry_data(&sol, 0, None).unwrap();
    let phi = parse_potential(2, "0.3*x1 - 0.1*x2").unwrap();
    let r = [0.2, 0.4];

    let (b0, p) = zero_field_and_parameters(0.1, 1.0);
    let eff = effective_hamiltonian(&sol, 0, &b0, &phi, &berry, p).unwrap();
    let j = hall_current(&eff, &r).unwrap();
    assert_eq!(j.chern, 0);
    assert!(j.chern_term.iter().all(|c| c.abs() <= 1e-6));
    assert!(j.gradient_integral.iter().all(|g| g.abs() <= 1e-8), "{:?}", j.gradient_integral);
    assert!(j.current.iter().all(|c| c.abs() <= 1e-12), "B = 0 current {:?}", j.current);

    let b = MagneticField::constant(0.4);
    let eff = effective_hamiltonian(&sol, 0, &b, &phi, &berry, p).unwrap();
    let j = hall_current(&eff, &r).unwrap();
    assert!(j.chern_term.iter().all(|c| c.abs() <= 1e-6));
    assert!(j.current.iter().all(|c| c.is_finite()));
    assert!(j.magnetic_term.iter().any(|c| c.abs() > 0.0));
}

#[test]
fn potential_validation() {
    let bad = [PotentialCoefficient {
        index: [1, 0],
        value: C64::new(0.0, 1.0),
    }];
    assert!(PeriodicPotential::new(2, &bad, true).is_err());
    assert!(PeriodicPotential::new(2, &bad, false).is_ok());
    let v = chiral_potential();
    let lat = Lattice::square(2, 1.0, 3).unwrap();
    for y in [[0.1, 0.7], [0.33, -0.2]] {
        let direct = -2.0 * (2.0 * PI * y[0]).cos() - 2.0 * (2.0 * PI * y[1]).cos() + (2.0 * PI * (y[0] + y[1])).sin();
        let val = v.eval(&lat, &y);
        assert!((val.re - direct).abs() < 1e-12 && val.im.abs() < 1e-12);
    }
    assert!(Lattice::new(&[vec![1.0, 2.0], vec![2.0, 4.0]], 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn real_potentials_give_hermitian_fibers(
        a in -2.0f64..2.0, b in -2.0f64..2.0, ph in 0.0f64..6.3, k1 in -4.0f64..4.0, k2 in -4.0f64..4.0,
    ) {
        let v = PeriodicPotential::cosines(2, &[([1, 0], a, ph), ([1, -1], b, 0.5 * ph)]).unwrap();
        let lat = Lattice::square(2, 1.0, 3).unwrap();
        let h = fiber_hamiltonian(&[k1, k2], &v, &lat, 2).unwrap();
        prop_assert!(hermiticity_defect(&h) <= 1e-14);
    }

    #[test]
    fn zak_preserves_norms(c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, w in 0.1f64..2.0) {
        let lat = Lattice::square(1, 1.0, 5).unwrap();
        let psi = SupercellFunction::from_fn(&lat, 5, 4, |r| C64::new(c0 + (w * r[0]).cos(), c1 * r[0])).unwrap();
        let z = zak_transform(&psi, &lat).unwrap();
        prop_assert!((z.fibered_norm() - psi.norm(&lat)).abs() <= 1e-10 * psi.norm(&lat).max(1.0));
    }
}
