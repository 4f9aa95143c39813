//! Orbital representations of density matrices `P = Phi Phi^*` and of tangent
//! vectors `X = Phi Xi^* + Xi Phi^*` (with the gauge condition `Phi^* Xi = 0`).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Orthonormal columns of Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    coeffs: CMatrix,
}

impl OrbitalSet {
    /// Wraps `coeffs`, checking `Phi^* Phi = I` to 1e-10 (Frobenius).
    pub fn new(coeffs: CMatrix) -> Result<Self> {
        let dev = orthonormality_defect(&coeffs);
        if dev > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "orbitals are not orthonormal (|Phi^*Phi - I|_F = {dev:e})"
            )));
        }
        Ok(Self { coeffs })
    }

    /// Symmetric (Löwdin) orthonormalization `Y (Y^* Y)^{-1/2}`.
    pub fn orthonormalize(y: CMatrix) -> Result<Self> {
        Self::lowdin(y, 2)
    }

    fn lowdin(y: CMatrix, passes: usize) -> Result<Self> {
        let s = y.adjoint() * &y;
        let eig = s.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-14) {
            return Err(Error::InvalidInput(format!(
                "cannot orthonormalize rank-deficient columns (smallest overlap eigenvalue {min:e})"
            )));
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.powf(-0.5), 0.0)));
        let s_inv_sqrt = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.adjoint();
        let coeffs = y * s_inv_sqrt;
        // one more pass cleans up the rounding left by the eigendecomposition
        if passes > 1 && orthonormality_defect(&coeffs) > 1e-14 {
            return Self::lowdin(coeffs, passes - 1);
        }
        Ok(Self { coeffs })
    }

    /// Seeded random orthonormal block.
    pub fn random(n_b: usize, n_el: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = CMatrix::from_fn(n_b, n_el, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        Self::orthonormalize(y)
    }

    pub fn coeffs(&self) -> &CMatrix {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> CMatrix {
        self.coeffs
    }

    pub fn n_el(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.coeffs.nrows()
    }

    /// Same density matrix, rotated orbitals `Phi U`.
    pub fn rotated(&self, u: &CMatrix) -> Result<Self> {
        Self::new(&self.coeffs * u)
    }

}

/// `|Phi^* Phi - I|_F`.
pub fn orthonormality_defect(phi: &CMatrix) -> f64 {
    let n = phi.ncols();
    (phi.adjoint() * phi - CMatrix::identity(n, n)).norm()
}

/// Orbital variations `Xi` representing a tangent vector at `P = Phi Phi^*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSet {
    coeffs: CMatrix,
}

impl TangentSet {
    /// Wraps `coeffs` after checking `|Phi^* Xi|_F <= 1e-10 max(1, |Xi|_F)`.
    pub fn new(phi: &OrbitalSet, coeffs: CMatrix) -> Result<Self> {
        let t = Self { coeffs };
        t.check_gauge(phi, 1e-10)?;
        Ok(t)
    }

    pub fn zeros(n_b: usize, n_el: usize) -> Self {
        Self {
            coeffs: CMatrix::zeros(n_b, n_el),
        }
    }

    pub(crate) fn from_raw(coeffs: CMatrix) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &CMatrix {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut CMatrix {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> CMatrix {
        self.coeffs
    }

    /// `|Phi^* Xi|_F`.
    pub fn gauge_defect(&self, phi: &OrbitalSet) -> f64 {
        (phi.coeffs().adjoint() * &self.coeffs).norm()
    }

    /// Fails with [`Error::GaugeViolation`] when `|Phi^* Xi|_F > tol max(1, |Xi|_F)`.
    pub fn check_gauge(&self, phi: &OrbitalSet, tol: f64) -> Result<()> {
        if phi.n_basis() != self.coeffs.nrows() || phi.n_el() != self.coeffs.ncols() {
            return Err(Error::BasisMismatch(format!(
                "tangent set is {}x{}, orbitals are {}x{}",
                self.coeffs.nrows(),
                self.coeffs.ncols(),
                phi.n_basis(),
                phi.n_el()
            )));
        }
        let g = self.gauge_defect(phi);
        if g > tol * self.coeffs.norm().max(1.0) {
            return Err(Error::GaugeViolation(g));
        }
        Ok(())
    }

    /// Frobenius inner product of the represented matrices, `2 Re Tr(Xi1^* Xi2)`.
    pub fn dot(&self, other: &TangentSet) -> f64 {
        2.0 * self.coeffs.dotc(&other.coeffs).re
    }

    /// Frobenius norm of the represented matrix, `sqrt(2) |Xi|_F`.
    pub fn norm(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.coeffs.norm()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_raw(&self.coeffs * Complex64::new(a, 0.0))
    }

    pub fn add(&self, other: &TangentSet) -> Self {
        Self::from_raw(&self.coeffs + &other.coeffs)
    }

    pub fn sub(&self, other: &TangentSet) -> Self {
        Self::from_raw(&self.coeffs - &other.coeffs)
    }

    /// Same tangent vector expressed for the rotated orbitals `Phi U`.
    pub fn rotated(&self, u: &CMatrix) -> Self {
        Self::from_raw(&self.coeffs * u)
    }
}
