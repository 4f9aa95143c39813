//! Orbital-space operators against dense density-matrix assemblies on small bases.

use nalgebra::DMatrix;
use num_complex::Complex64;
use pwap_core::geometry::{apply_k, apply_omega, project_tangent, residual, OrbitalMetric};
use pwap_core::model::{energy, local_potential, Hamiltonian};
use pwap_core::oracle;
use pwap_core::solvers::{scf, solve_omega_plus_k, ScfOptions};
use pwap_core::{Atom, FourierTerm, Lattice, MeanFieldModel, OrbitalSet, PlaneWaveBasis, TangentSet};

fn model() -> MeanFieldModel {
    let atoms = vec![
        Atom {
            position: vec![0.15],
            depth: -3.0,
            width: 0.8,
        },
        Atom {
            position: vec![0.6],
            depth: -2.0,
            width: 0.6,
        },
    ];
    MeanFieldModel::new(Lattice::line(6.0).unwrap(), atoms, 2)
        .unwrap()
        .with_alpha(0.7)
        .unwrap()
        .with_hartree(true)
        .with_external(FourierTerm::cosine([2, 0, 0], 0.2).to_vec())
}

/// Eleven plane waves.
fn basis(m: &MeanFieldModel) -> PlaneWaveBasis {
    let b = PlaneWaveBasis::new(m.lattice.clone(), 15.0, 3).unwrap();
    assert!(b.len() <= 12);
    b
}

/// Plain damped mixing needs a small step once the Hartree term is on.
fn solve(m: &MeanFieldModel, b: &PlaneWaveBasis) -> OrbitalSet {
    let opts = ScfOptions {
        damping: 0.1,
        max_iter: 400,
        ..ScfOptions::default()
    };
    let (phi, report) = scf(m, b, &opts).unwrap();
    assert!(report.converged);
    phi
}

fn random_tangent(phi: &OrbitalSet, seed: u64) -> TangentSet {
    let raw = OrbitalSet::random(phi.n_basis(), phi.n_el(), seed).unwrap().into_coeffs();
    project_tangent(phi, &(raw * Complex64::new(0.3, 0.8)))
}

#[test]
fn hamiltonian_and_energy_match_dense() {
    let m = model();
    let b = basis(&m);
    let phi = OrbitalSet::random(b.len(), 2, 3).unwrap();
    let p = oracle::projector(phi.coeffs());
    let id = DMatrix::identity(b.len(), b.len());
    let h = Hamiltonian::at(&m, &b, phi.coeffs()).unwrap().apply(&id);
    assert!((h - oracle::hamiltonian(&m, &b, &p)).norm() < 1e-10);
    let e = energy(&m, &b, &phi).unwrap();
    assert!((e - oracle::energy(&m, &b, &p)).abs() < 1e-10);
}

#[test]
fn hamiltonian_matches_dense_in_three_dimensions() {
    let atoms = vec![Atom {
        position: vec![0.1, 0.2, 0.3],
        depth: -2.0,
        width: 0.7,
    }];
    let m = MeanFieldModel::new(Lattice::cubic(4.0).unwrap(), atoms, 1)
        .unwrap()
        .with_alpha(0.5)
        .unwrap()
        .with_hartree(true);
    let b = PlaneWaveBasis::new(m.lattice.clone(), 3.0, 3).unwrap();
    let phi = OrbitalSet::random(b.len(), 1, 8).unwrap();
    let p = oracle::projector(phi.coeffs());
    let id = DMatrix::identity(b.len(), b.len());
    let h = Hamiltonian::at(&m, &b, phi.coeffs()).unwrap().apply(&id);
    assert!((h - oracle::hamiltonian(&m, &b, &p)).norm() < 1e-10);
}

#[test]
fn residual_matches_double_commutator() {
    let m = model();
    let b = basis(&m);
    let phi = OrbitalSet::random(b.len(), 2, 5).unwrap();
    let p = oracle::projector(phi.coeffs());
    let dense = oracle::orbital_form(phi.coeffs(), &oracle::residual(&m, &b, &p));
    let r = residual(&m, &b, &phi).unwrap();
    assert!((r.coeffs() - dense).norm() < 1e-9);
}

#[test]
fn omega_and_k_match_super_operators() {
    let m = model();
    let b = basis(&m);
    let phi = OrbitalSet::random(b.len(), 2, 6).unwrap();
    let p = oracle::projector(phi.coeffs());
    for seed in 0..4 {
        let xi = random_tangent(&phi, 100 + seed);
        let x = oracle::tangent_matrix(phi.coeffs(), xi.coeffs());
        let om = apply_omega(&m, &b, &phi, &xi).unwrap();
        let dense = oracle::orbital_form(phi.coeffs(), &oracle::omega(&m, &b, &p, &x));
        assert!((om.coeffs() - dense).norm() < 1e-9);
        let k = apply_k(&m, &b, &phi, &xi).unwrap();
        let dense = oracle::orbital_form(phi.coeffs(), &oracle::k(&m, &b, &p, &x));
        assert!((k.coeffs() - dense).norm() < 1e-9);
    }
}

#[test]
fn metric_matches_dense_blocks() {
    let m = model();
    let b = basis(&m);
    let phi = OrbitalSet::random(b.len(), 2, 9).unwrap();
    let p = oracle::projector(phi.coeffs());
    // canonical orbitals and their shifts, from dense matrices
    let h = oracle::hamiltonian(&m, &b, &p);
    let lam = phi.coeffs().adjoint() * &h * phi.coeffs();
    let eig = lam.symmetric_eigen();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let v = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    let kinetic: Vec<f64> = b.g2_all().iter().map(|g| 0.5 * g).collect();
    let canonical = phi.coeffs() * &v;
    let shifts: Vec<f64> = canonical
        .column_iter()
        .map(|c| c.iter().zip(&kinetic).map(|(z, k)| k * z.norm_sqr()).sum::<f64>().max(1e-3))
        .collect();
    let blocks = oracle::metric_blocks(&kinetic, &p, &shifts);

    let metric = OrbitalMetric::new(&m, &b, &phi).unwrap();
    for (got, want) in metric.shifts().iter().zip(&shifts) {
        assert!((got - want).abs() < 1e-10);
    }
    let xi = random_tangent(&phi, 11);
    let rotated = xi.coeffs() * &v;
    let mut dense = rotated.clone();
    for i in 0..2 {
        dense.set_column(i, &(&blocks[i] * rotated.column(i)));
    }
    let dense = dense * v.adjoint();
    let got = metric.apply_power(&xi, 1.0).unwrap();
    assert!((got.coeffs() - &dense).norm() < 1e-9);
    let back = metric.apply_power(&TangentSet::new(&phi, dense).unwrap(), -1.0).unwrap();
    assert!((back.coeffs() - xi.coeffs()).norm() < 1e-9);
}

#[test]
fn jacobian_solve_matches_dense_solve() {
    let m = model();
    let b = basis(&m);
    let phi = solve(&m, &b);
    let rhs = random_tangent(&phi, 21);
    let got = solve_omega_plus_k(&m, &b, &phi, &rhs, 1e-13, None).unwrap();
    let want = oracle::solve_omega_plus_k(&m, &b, phi.coeffs(), rhs.coeffs(), None);
    assert!((got.coeffs() - want).norm() < 1e-9);
}

#[test]
fn restricted_solve_matches_dense_masked_solve() {
    let m = model();
    let coarse = PlaneWaveBasis::new(m.lattice.clone(), 6.0, 3).unwrap();
    let fine = basis(&m);
    let pc = solve(&m, &coarse);
    let phi = OrbitalSet::new(fine.lift(&coarse, pc.coeffs()).unwrap()).unwrap();
    let mask: Vec<bool> = fine.g2_all().iter().map(|g| 0.5 * g <= 6.0).collect();
    let mut rhs = random_tangent(&phi, 4).into_coeffs();
    for (i, keep) in mask.iter().enumerate() {
        if !keep {
            rhs.row_mut(i).fill(Complex64::new(0.0, 0.0));
        }
    }
    let rhs = project_tangent(&phi, &rhs);
    let got = solve_omega_plus_k(&m, &fine, &phi, &rhs, 1e-13, Some(6.0)).unwrap();
    let want = oracle::solve_omega_plus_k(&m, &fine, phi.coeffs(), rhs.coeffs(), Some(&mask));
    assert!((got.coeffs() - want).norm() < 1e-9);
}

/// Sum over lattice images of the real-space Gaussians.
#[test]
fn local_potential_matches_periodized_gaussians() {
    let atoms = vec![
        Atom {
            position: vec![0.2],
            depth: -1.5,
            width: 1.0,
        },
        Atom {
            position: vec![0.7],
            depth: -0.5,
            width: 1.2,
        },
    ];
    let a = 6.0;
    let m = MeanFieldModel::new(Lattice::line(a).unwrap(), atoms, 1).unwrap();
    let b = PlaneWaveBasis::new(m.lattice.clone(), 15.0, 3).unwrap();
    let v = local_potential(&m, &b);
    for (idx, got) in v.values.iter().enumerate() {
        let x = b.grid().point_of_index(idx)[0] * a;
        let mut want = 0.0;
        for atom in &m.atoms {
            for img in -6..=6 {
                let d = x - atom.position[0] * a - img as f64 * a;
                want += atom.depth * (-d * d / (2.0 * atom.width * atom.width)).exp();
            }
        }
        assert!((got - want).abs() < 1e-10, "x = {x}: {got} vs {want}");
    }
}
