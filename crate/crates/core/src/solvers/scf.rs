//! Self-consistent field iteration with simple density damping.

use tracing::{debug, warn};

use crate::basis::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::geometry::project_tangent;
use crate::model::{density, energy, Density, Hamiltonian, MeanFieldModel};
use crate::orbitals::{CMatrix, OrbitalSet};
use crate::solvers::lobpcg::{kinetic_preconditioner, lobpcg_block, random_block, LobpcgOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScfOptions {
    /// Fraction of the new density mixed in each iteration.
    pub damping: f64,
    pub max_iter: usize,
    /// Bound on the Frobenius norm of the residual `R(P)`.
    pub tol: f64,
    pub eig_tol: f64,
    pub seed: u64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self {
            damping: 0.7,
            max_iter: 200,
            tol: 1e-10,
            eig_tol: 1e-12,
            seed: 0,
        }
    }
}

impl ScfOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) || !(self.eig_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub energies: Vec<f64>,
}

fn lowest_orbitals(
    ham: &Hamiltonian,
    n_el: usize,
    start: CMatrix,
    tol: f64,
    seed: u64,
) -> Result<(Vec<f64>, CMatrix)> {
    let opts = LobpcgOptions {
        tol,
        max_iter: 500,
        seed,
    };
    let out = lobpcg_block(
        |x: &CMatrix| ham.apply(x),
        kinetic_preconditioner(ham.kinetic()),
        |_: &mut CMatrix| {},
        start,
        &opts,
    )?;
    if !out.converged {
        debug!(residual = ?out.residuals, "eigensolver stopped before tolerance");
    }
    debug_assert!(out.vectors.ncols() == n_el);
    Ok((out.eigenvalues, out.vectors))
}

/// `sqrt(2) |P_perp H(P) Phi|_F` together with the energy.
fn residual_norm(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet, rho: &Density) -> Result<f64> {
    let ham = Hamiltonian::new(model, basis, Some(rho))?;
    Ok(project_tangent(phi, &ham.apply(phi.coeffs())).norm())
}

/// Ground state from the lowest eigenvectors of the core Hamiltonian.
pub fn scf(model: &MeanFieldModel, basis: &PlaneWaveBasis, opts: &ScfOptions) -> Result<(OrbitalSet, SolveReport)> {
    scf_from(model, basis, opts, None)
}

/// Ground state starting from the density of `start` when given.
pub fn scf_from(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    opts: &ScfOptions,
    start: Option<&OrbitalSet>,
) -> Result<(OrbitalSet, SolveReport)> {
    model.validate()?;
    model.check_basis(basis)?;
    opts.validate()?;
    let n_el = model.n_el;

    let mut phi = match start {
        Some(s) => {
            basis.check_len(s.n_basis())?;
            if s.n_el() != n_el {
                return Err(Error::InvalidInput("starting orbitals have the wrong count".into()));
            }
            s.coeffs().clone()
        }
        None => {
            let h0 = Hamiltonian::new(model, basis, None)?;
            let x0 = random_block(basis.len(), n_el, opts.seed);
            lowest_orbitals(&h0, n_el, x0, opts.eig_tol, opts.seed)?.1
        }
    };
    let mut rho_in = density(basis, &phi);
    let mut energies = Vec::new();
    let mut res = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let ham = Hamiltonian::new(model, basis, Some(&rho_in))?;
        let (_, vecs) = lowest_orbitals(&ham, n_el, phi.clone(), opts.eig_tol, opts.seed)?;
        let orbitals = OrbitalSet::orthonormalize(vecs)?;
        let rho_out = density(basis, orbitals.coeffs());
        res = residual_norm(model, basis, &orbitals, &rho_out)?;
        energies.push(energy(model, basis, &orbitals)?);
        debug!(iteration = it, residual = res, energy = energies[it - 1], "scf");
        phi = orbitals.coeffs().clone();
        if res <= opts.tol {
            return Ok((
                orbitals,
                SolveReport {
                    converged: true,
                    iterations: it,
                    residual_norm: res,
                    energies,
                },
            ));
        }
        if it > 3 && energies[it - 1] > energies[it - 2] + 1e-12 {
            debug!(iteration = it, "energy increased");
        }
        rho_in = rho_in.axpy(opts.damping, &rho_out.axpy(-1.0, &rho_in));
    }
    warn!(residual = res, "scf did not converge");
    let orbitals = OrbitalSet::orthonormalize(phi)?;
    Ok((
        orbitals,
        SolveReport {
            converged: false,
            iterations: opts.max_iter,
            residual_norm: res,
            energies,
        },
    ))
}
