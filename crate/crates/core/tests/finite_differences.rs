//! Analytic derivatives against central finite differences.

use num_complex::Complex64;
use pwap_core::geometry::{apply_k, project_tangent, residual, TangentContext};
use pwap_core::model::{density, energy, force_derivative, forces, forces_from_density, Hamiltonian};
use pwap_core::solvers::{scf, ScfOptions};
use pwap_core::{Atom, CMatrix, Lattice, MeanFieldModel, OrbitalSet, PlaneWaveBasis, TangentSet};

fn two_atoms(hartree: bool) -> MeanFieldModel {
    let atoms = vec![
        Atom {
            position: vec![0.2],
            depth: -4.0,
            width: 0.5,
        },
        Atom {
            position: vec![0.63],
            depth: -3.0,
            width: 0.4,
        },
    ];
    MeanFieldModel::new(Lattice::line(6.0).unwrap(), atoms, 1)
        .unwrap()
        .with_alpha(1.0)
        .unwrap()
        .with_hartree(hartree)
}

fn tight() -> ScfOptions {
    ScfOptions {
        tol: 1e-11,
        ..ScfOptions::default()
    }
}

fn random_tangent(phi: &OrbitalSet, seed: u64) -> TangentSet {
    let raw = OrbitalSet::random(phi.n_basis(), phi.n_el(), seed).unwrap().into_coeffs();
    project_tangent(phi, &raw)
}

fn scale(x: &CMatrix, t: f64) -> CMatrix {
    x * Complex64::new(t, 0.0)
}

#[test]
fn forces_are_energy_derivatives_of_the_ground_state() {
    let m = two_atoms(false);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 20.0, 3).unwrap();
    let (phi, report) = scf(&m, &b, &tight()).unwrap();
    assert!(report.converged);
    let f = forces(&m, &b, &phi).unwrap();
    let h = 1e-4;
    for j in 0..2 {
        let mut e = [0.0; 2];
        for (k, s) in [1.0, -1.0].into_iter().enumerate() {
            let shifted = m.displaced(j, 0, s * h);
            let (p, rep) = scf(&shifted, &b, &tight()).unwrap();
            assert!(rep.converged);
            e[k] = energy(&shifted, &b, &p).unwrap();
        }
        let fd = -(e[0] - e[1]) / (2.0 * h);
        assert!((fd - f[(0, j)]).abs() <= 1e-5 * f[(0, j)].abs(), "atom {j}: {fd} vs {}", f[(0, j)]);
    }
}

#[test]
fn ground_state_forces_sum_to_zero() {
    let m = two_atoms(false);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 10.0, 3).unwrap();
    let (phi, _) = scf(&m, &b, &tight()).unwrap();
    let f = forces(&m, &b, &phi).unwrap();
    assert!(f.row(0).sum().abs() < 1e-9);
}

#[test]
fn force_derivative_is_linearized_force() {
    let m = two_atoms(false);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 10.0, 3).unwrap();
    let phi = OrbitalSet::random(b.len(), 1, 3).unwrap();
    let xi = random_tangent(&phi, 4);
    let t = 1e-3;
    let plus = forces_from_density(&m, &b, &density(&b, &(phi.coeffs() + scale(xi.coeffs(), t))));
    let minus = forces_from_density(&m, &b, &density(&b, &(phi.coeffs() - scale(xi.coeffs(), t))));
    let fd = (plus - minus) / (2.0 * t);
    let df = force_derivative(&m, &b, &phi, &xi).unwrap();
    assert!((fd - &df).norm() < 1e-9 * df.norm().max(1.0));
}

#[test]
fn k_is_derivative_of_the_mean_field() {
    let m = two_atoms(true);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 10.0, 3).unwrap();
    let phi = OrbitalSet::random(b.len(), 1, 5).unwrap();
    let xi = random_tangent(&phi, 6);
    let t = 1e-4;
    let hp = Hamiltonian::at(&m, &b, &(phi.coeffs() + scale(xi.coeffs(), t))).unwrap();
    let hm = Hamiltonian::at(&m, &b, &(phi.coeffs() - scale(xi.coeffs(), t))).unwrap();
    let dh = (hp.apply(phi.coeffs()) - hm.apply(phi.coeffs())) / Complex64::new(2.0 * t, 0.0);
    let fd = project_tangent(&phi, &dh);
    let k = apply_k(&m, &b, &phi, &xi).unwrap();
    assert!((fd.coeffs() - k.coeffs()).norm() < 1e-7 * k.norm());
}

#[test]
fn residual_is_riemannian_gradient() {
    let m = two_atoms(true);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 10.0, 3).unwrap();
    let phi = OrbitalSet::random(b.len(), 1, 7).unwrap();
    let xi = random_tangent(&phi, 8);
    let t = 1e-4;
    let ep = energy(&m, &b, &OrbitalSet::orthonormalize(phi.coeffs() + scale(xi.coeffs(), t)).unwrap()).unwrap();
    let em = energy(&m, &b, &OrbitalSet::orthonormalize(phi.coeffs() - scale(xi.coeffs(), t)).unwrap()).unwrap();
    let fd = (ep - em) / (2.0 * t);
    let r = residual(&m, &b, &phi).unwrap();
    let de = r.dot(&xi);
    assert!((fd - de).abs() < 1e-6 * de.abs().max(1.0), "{fd} vs {de}");
}

#[test]
fn jacobian_is_derivative_of_the_residual_at_the_ground_state() {
    let m = two_atoms(false);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 10.0, 3).unwrap();
    let (phi, report) = scf(&m, &b, &tight()).unwrap();
    assert!(report.converged);
    let xi = random_tangent(&phi, 9);
    let t = 1e-4;
    let rp = residual(&m, &b, &OrbitalSet::orthonormalize(phi.coeffs() + scale(xi.coeffs(), t)).unwrap()).unwrap();
    let rm = residual(&m, &b, &OrbitalSet::orthonormalize(phi.coeffs() - scale(xi.coeffs(), t)).unwrap()).unwrap();
    let fd = (rp.coeffs() - rm.coeffs()) / Complex64::new(2.0 * t, 0.0);
    let ctx = TangentContext::new(&m, &b, &phi).unwrap();
    let jx = ctx.omega_plus_k(&xi).unwrap();
    assert!((fd - jx.coeffs()).norm() < 1e-6 * jx.norm());
}
