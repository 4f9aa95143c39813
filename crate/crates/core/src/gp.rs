//! One-dimensional periodic Gross-Pitaevskii model on `[0, 2 pi)`,
//! `E(phi) = int |phi'|^2 + V |phi|^2 + 1/2 |phi|^4`, and a numerical check
//! that `M_N^{1/2} A_N^{-1} M_N^{1/2}` approaches the identity on the
//! high-frequency complement `X_N^perp` as the cutoff `N` grows.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use tracing::warn;

use crate::basis::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::geometry::OrbitalMetric;
use crate::lattice::Lattice;
use crate::model::{apply_potential, density, FourierTerm, Hamiltonian, MeanFieldModel};
use crate::orbitals::{CMatrix, OrbitalSet, TangentSet};
use crate::solvers::lobpcg::random_block;
use crate::solvers::scf::{scf, ScfOptions};

/// The model with external potential `v` (kinetic operator `-Laplace`, coupling 1).
pub fn gp_model(v: &[FourierTerm]) -> Result<MeanFieldModel> {
    Ok(MeanFieldModel::new(Lattice::line(2.0 * PI)?, vec![], 1)?
        .with_alpha(1.0)?
        .with_kinetic_prefactor(1.0)?
        .with_external(v.to_vec()))
}

fn check_basis(basis: &PlaneWaveBasis) -> Result<()> {
    if basis.dim() != 1 || (basis.lattice().volume() - 2.0 * PI).abs() > 1e-12 {
        return Err(Error::InvalidInput("the GP model lives on the one-dimensional cell [0, 2 pi)".into()));
    }
    Ok(())
}

/// Discrete ground state `(phi_N, lambda_N)` with the global phase fixed so
/// that the zero-frequency coefficient is real and positive.
pub fn gp_ground_state(v: &[FourierTerm], basis: &PlaneWaveBasis, opts: &ScfOptions) -> Result<(OrbitalSet, f64)> {
    check_basis(basis)?;
    let model = gp_model(v)?;
    let (phi, report) = scf(&model, basis, opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            what: "GP ground state",
            iterations: report.iterations,
            residual: report.residual_norm,
        });
    }
    let c0 = phi.coeffs()[(0, 0)];
    let phase = if c0.norm() > 0.0 { c0.conj() / c0.norm() } else { Complex64::new(1.0, 0.0) };
    let phi = OrbitalSet::new(phi.coeffs() * phase)?;
    let ham = Hamiltonian::at(&model, basis, phi.coeffs())?;
    let lambda = (phi.coeffs().adjoint() * ham.apply(phi.coeffs()))[(0, 0)].re;
    Ok((phi, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions {
    /// `X_N^perp` is truncated at `reference_factor * max(N)`.
    pub reference_factor: f64,
    /// Relative change of the Rayleigh quotient that stops the power iteration.
    pub power_tol: f64,
    pub power_max_iter: usize,
    pub supersampling: usize,
    pub scf: ScfOptions,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            reference_factor: 16.0,
            power_tol: 1e-6,
            power_max_iter: 2000,
            supersampling: 3,
            scf: ScfOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpVerification {
    pub cutoffs: Vec<f64>,
    /// `|M_N^{1/2} A_N^{-1} M_N^{1/2} - I|` on `X_N^perp`.
    pub norms: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub reference_ecut: f64,
    /// Least-squares slope of `log norm` against `log (1+2N)^{-1/2}`; `None`
    /// for fewer than two cutoffs.
    pub slope: Option<f64>,
    /// Smallest `C` with `norm <= C (1+2N)^{-1/2}` on every cutoff.
    pub bound_constant: f64,
}

impl GpVerification {
    pub fn bound_fit(&self) -> Vec<f64> {
        self.cutoffs
            .iter()
            .map(|n| self.bound_constant * (1.0 + 2.0 * n).powf(-0.5))
            .collect()
    }
}

/// `M^{1/2} A^{-1} M^{1/2} - I` at a discrete ground state, represented in a
/// truncated reference basis.
pub struct DifferenceOperator {
    basis: PlaneWaveBasis,
    phi: OrbitalSet,
    metric: OrbitalMetric,
    bordered: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    high: Vec<bool>,
}

impl DifferenceOperator {
    /// `phi` must be given in `reference` and supported on the sphere of cutoff `ecut`.
    pub fn new(v: &[FourierTerm], reference: &PlaneWaveBasis, phi: &OrbitalSet, lambda: f64, ecut: f64) -> Result<Self> {
        check_basis(reference)?;
        let model = gp_model(v)?;
        let n = reference.len();
        let ham = Hamiltonian::at(&model, reference, phi.coeffs())?;
        // A~ = -Laplace + V + 3 phi^2 - lambda, with phi real so |phi|^2 = phi^2
        let rho = density(reference, phi.coeffs());
        let twice: Vec<f64> = rho.values.iter().map(|r| 2.0 * r).collect();
        let id = CMatrix::identity(n, n);
        let a = ham.apply(&id) + apply_potential(reference, &twice, &id) - &id * Complex64::new(lambda, 0.0);
        let mut bordered = CMatrix::zeros(n + 1, n + 1);
        bordered.view_mut((0, 0), (n, n)).copy_from(&a);
        for i in 0..n {
            bordered[(i, n)] = phi.coeffs()[(i, 0)];
            bordered[(n, i)] = phi.coeffs()[(i, 0)].conj();
        }
        let metric = OrbitalMetric::with_shifts(reference, phi, 1.0, vec![1.0])?;
        let high: Vec<bool> = reference.g2_all().iter().map(|g| 0.5 * g > ecut).collect();
        Ok(Self {
            basis: reference.clone(),
            phi: phi.clone(),
            metric,
            bordered: bordered.lu(),
            high,
        })
    }

    /// Solves `A v = u` on `phi^perp`.
    fn solve(&self, u: &CMatrix) -> Result<CMatrix> {
        let n = self.basis.len();
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&u.column(0));
        let sol = self
            .bordered
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput("A_N is singular on the orthogonal complement of phi".into()))?;
        Ok(CMatrix::from_column_slice(n, 1, sol.rows(0, n).as_slice()))
    }

    /// `D y` for `y` orthogonal to `phi`.
    pub fn apply(&self, y: &CMatrix) -> Result<CMatrix> {
        let up = self.metric.apply_power(&TangentSet::from_raw(y.clone()), 0.5)?;
        let v = self.solve(up.coeffs())?;
        let w = self.metric.apply_power(&TangentSet::from_raw(v), 0.5)?;
        Ok(w.coeffs() - y)
    }

    pub fn restrict_high(&self, y: &CMatrix) -> CMatrix {
        let mut out = y.clone();
        for (i, h) in self.high.iter().enumerate() {
            if !h {
                out[(i, 0)] = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    pub fn high_mask(&self) -> &[bool] {
        &self.high
    }

    pub fn phi(&self) -> &OrbitalSet {
        &self.phi
    }

    /// `|D|` from `X_N^perp` to L2, by power iteration on `Pi_2 D^* D Pi_2`.
    pub fn norm(&self, tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
        let n = self.basis.len();
        let mut x = self.restrict_high(&random_block::<Complex64>(n, 1, seed));
        let nx = x.norm();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x /= Complex64::new(nx, 0.0);
        let mut quotient = 0.0;
        for _ in 0..max_iter {
            let dx = self.apply(&x)?;
            let y = self.restrict_high(&self.apply(&dx)?);
            let q = dx.norm_squared();
            let ny = y.norm();
            if ny == 0.0 {
                return Ok(0.0);
            }
            x = y / Complex64::new(ny, 0.0);
            if (q - quotient).abs() <= tol * q {
                return Ok(q.sqrt());
            }
            quotient = q;
        }
        Err(Error::NotConverged {
            what: "power iteration",
            iterations: max_iter,
            residual: quotient,
        })
    }
}

/// Norm of the difference operator at cutoff `ecut`, with `X_N^perp`
/// truncated at `reference_ecut`.
pub fn difference_norm(v: &[FourierTerm], ecut: f64, reference_ecut: f64, opts: &GpOptions) -> Result<(f64, f64)> {
    let lattice = Lattice::line(2.0 * PI)?;
    let coarse = PlaneWaveBasis::new(lattice.clone(), ecut, opts.supersampling)?;
    let reference = PlaneWaveBasis::new(lattice, reference_ecut, opts.supersampling)?;
    let (phi, lambda) = gp_ground_state(v, &coarse, &opts.scf)?;
    let lifted = OrbitalSet::new(reference.lift(&coarse, phi.coeffs())?)?;
    let d = DifferenceOperator::new(v, &reference, &lifted, lambda, ecut)?;
    Ok((d.norm(opts.power_tol, opts.power_max_iter, opts.scf.seed)?, lambda))
}

/// Measures the difference-operator norm for each cutoff and fits its decay.
pub fn verify_proposition(v: &[FourierTerm], cutoffs: &[f64], opts: &GpOptions) -> Result<GpVerification> {
    if cutoffs.is_empty() {
        return Err(Error::InvalidInput("no cutoffs given".into()));
    }
    if cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("cutoffs must be increasing".into()));
    }
    let nmax = cutoffs[cutoffs.len() - 1];
    let reference_ecut = opts.reference_factor * nmax;
    let mut norms = Vec::new();
    let mut lambdas = Vec::new();
    for &n in cutoffs {
        let (norm, lambda) = difference_norm(v, n, reference_ecut, opts)?;
        norms.push(norm);
        lambdas.push(lambda);
    }
    let xs: Vec<f64> = cutoffs.iter().map(|n| -0.5 * (1.0 + 2.0 * n).ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let slope = if cutoffs.len() < 2 {
        warn!("a single cutoff does not determine a decay rate; fit skipped");
        None
    } else {
        Some(least_squares_slope(&xs, &ys))
    };
    let bound_constant = cutoffs
        .iter()
        .zip(&norms)
        .map(|(n, v)| v * (1.0 + 2.0 * n).sqrt())
        .fold(0.0, f64::max);
    Ok(GpVerification {
        cutoffs: cutoffs.to_vec(),
        norms,
        lambdas,
        reference_ecut,
        slope,
        bound_constant,
    })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
