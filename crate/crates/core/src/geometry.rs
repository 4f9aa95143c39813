//! First- and second-order geometry of the density-matrix manifold in the
//! orbital picture: tangent projection, residual `P_perp H(P) Phi`, the
//! Jacobian pieces `Omega` and `K`, and the kinetic metric `M`.

use num_complex::Complex64;

use crate::basis::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::model::{apply_potential, hartree_potential, tangent_density, Hamiltonian, MeanFieldModel};
use crate::orbitals::{CMatrix, OrbitalSet, TangentSet};

/// `(1 - Phi Phi^*) raw`.
pub fn project_out(phi: &CMatrix, raw: &CMatrix) -> CMatrix {
    raw - phi * (phi.adjoint() * raw)
}

pub fn project_tangent(phi: &OrbitalSet, raw: &CMatrix) -> TangentSet {
    TangentSet::from_raw(project_out(phi.coeffs(), raw))
}

/// Everything needed to apply `Omega(P)` and `K(P)` repeatedly at a fixed `P`.
pub struct TangentContext<'a> {
    model: &'a MeanFieldModel,
    basis: &'a PlaneWaveBasis,
    phi: &'a OrbitalSet,
    ham: Hamiltonian<'a>,
    hphi: CMatrix,
    lambda: CMatrix,
}

impl<'a> TangentContext<'a> {
    pub fn new(model: &'a MeanFieldModel, basis: &'a PlaneWaveBasis, phi: &'a OrbitalSet) -> Result<Self> {
        basis.check_len(phi.n_basis())?;
        let ham = Hamiltonian::at(model, basis, phi.coeffs())?;
        let hphi = ham.apply(phi.coeffs());
        let lambda = phi.coeffs().adjoint() * &hphi;
        Ok(Self {
            model,
            basis,
            phi,
            ham,
            hphi,
            lambda,
        })
    }

    pub fn model(&self) -> &MeanFieldModel {
        self.model
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        self.basis
    }

    pub fn phi(&self) -> &OrbitalSet {
        self.phi
    }

    pub fn hamiltonian(&self) -> &Hamiltonian<'a> {
        &self.ham
    }

    /// `Phi^* H Phi`.
    pub fn lambda(&self) -> &CMatrix {
        &self.lambda
    }

    pub fn residual(&self) -> TangentSet {
        project_tangent(self.phi, &self.hphi)
    }

    fn check(&self, xi: &TangentSet) -> Result<()> {
        xi.check_gauge(self.phi, 1e-8)
    }

    pub fn omega_unchecked(&self, xi: &CMatrix) -> CMatrix {
        let raw = self.ham.apply(xi) - xi * &self.lambda;
        project_out(self.phi.coeffs(), &raw)
    }

    pub fn k_unchecked(&self, xi: &CMatrix) -> CMatrix {
        let n = xi.nrows();
        if self.model.alpha == 0.0 && !self.model.hartree {
            return CMatrix::zeros(n, xi.ncols());
        }
        let rho_x = tangent_density(self.basis, self.phi.coeffs(), xi);
        let mut dv: Vec<f64> = rho_x.values.iter().map(|r| self.model.alpha * r).collect();
        if self.model.hartree {
            let vh = hartree_potential(&rho_x, self.basis);
            dv.iter_mut().zip(&vh.values).for_each(|(d, h)| *d += h);
        }
        let raw = apply_potential(self.basis, &dv, self.phi.coeffs());
        project_out(self.phi.coeffs(), &raw)
    }

    pub fn omega(&self, xi: &TangentSet) -> Result<TangentSet> {
        self.check(xi)?;
        Ok(TangentSet::from_raw(self.omega_unchecked(xi.coeffs())))
    }

    pub fn k(&self, xi: &TangentSet) -> Result<TangentSet> {
        self.check(xi)?;
        Ok(TangentSet::from_raw(self.k_unchecked(xi.coeffs())))
    }

    pub fn omega_plus_k_unchecked(&self, xi: &CMatrix) -> CMatrix {
        self.omega_unchecked(xi) + self.k_unchecked(xi)
    }

    pub fn omega_plus_k(&self, xi: &TangentSet) -> Result<TangentSet> {
        self.check(xi)?;
        Ok(TangentSet::from_raw(self.omega_plus_k_unchecked(xi.coeffs())))
    }
}

/// `r_i = (1 - Phi Phi^*) H(P) phi_i`, the orbital form of `[P, [P, H(P)]]`.
pub fn residual(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet) -> Result<TangentSet> {
    Ok(TangentContext::new(model, basis, phi)?.residual())
}

/// `P_perp (H Xi - Xi Phi^* H Phi)`.
pub fn apply_omega(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    xi: &TangentSet,
) -> Result<TangentSet> {
    TangentContext::new(model, basis, phi)?.omega(xi)
}

/// `P_perp (dH phi_i)` with `dH = [V_H(rho_X)] + alpha rho_X`.
pub fn apply_k(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet, xi: &TangentSet) -> Result<TangentSet> {
    TangentContext::new(model, basis, phi)?.k(xi)
}

/// Block-diagonal metric `M_i = P_perp T_i^{1/2} P_perp T_i^{1/2} P_perp`
/// with `T_i = -c Laplace + t_i`.
///
/// The blocks refer to the canonical orbitals `Phi V` diagonalizing
/// `Phi^* H Phi`, so the metric depends on `P` only and not on the gauge.
#[derive(Debug, Clone)]
pub struct OrbitalMetric {
    phi: OrbitalSet,
    rotation: CMatrix,
    kinetic: Vec<f64>,
    shifts: Vec<f64>,
}

impl OrbitalMetric {
    /// Shifts `t_i = max(c |grad phi_i|^2, 1e-3)`: the kinetic energies of the
    /// canonical orbitals.
    pub fn new(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet) -> Result<Self> {
        Ok(Self::from_context(&TangentContext::new(model, basis, phi)?))
    }

    pub fn from_context(ctx: &TangentContext) -> Self {
        let model = ctx.model();
        let kinetic: Vec<f64> = ctx.basis().g2_all().iter().map(|g| model.kinetic_prefactor * g).collect();
        let lambda = ctx.lambda();
        let herm = (lambda + lambda.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let rotation = CMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
        let canonical = ctx.phi().coeffs() * &rotation;
        let shifts = canonical
            .column_iter()
            .map(|c| {
                let t: f64 = c.iter().zip(&kinetic).map(|(z, k)| k * z.norm_sqr()).sum();
                t.max(1e-3)
            })
            .collect();
        Self {
            phi: ctx.phi().clone(),
            rotation,
            kinetic,
            shifts,
        }
    }

    /// Metric with explicit kinetic prefactor and shifts, in the gauge of `phi`.
    pub fn with_shifts(basis: &PlaneWaveBasis, phi: &OrbitalSet, prefactor: f64, shifts: Vec<f64>) -> Result<Self> {
        basis.check_len(phi.n_basis())?;
        if shifts.len() != phi.n_el() || shifts.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput("metric needs one positive shift per orbital".into()));
        }
        Ok(Self {
            phi: phi.clone(),
            rotation: CMatrix::identity(phi.n_el(), phi.n_el()),
            kinetic: basis.g2_all().iter().map(|g| prefactor * g).collect(),
            shifts,
        })
    }

    /// Shifts of the canonical orbitals, in increasing orbital energy.
    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn phi(&self) -> &OrbitalSet {
        &self.phi
    }

    /// Unitary `V` taking `Phi` to the orbitals the blocks refer to.
    pub fn rotation(&self) -> &CMatrix {
        &self.rotation
    }

    /// `T^p` applied block-wise.
    pub fn apply_t_power(&self, x: &CMatrix, p: f64) -> CMatrix {
        let mut out = x * &self.rotation;
        for (i, t) in self.shifts.iter().enumerate() {
            for (row, k) in self.kinetic.iter().enumerate() {
                out[(row, i)] *= (k + t).powf(p);
            }
        }
        out * self.rotation.adjoint()
    }

    fn half(&self, x: &CMatrix) -> CMatrix {
        project_out(self.phi.coeffs(), &self.apply_t_power(x, 0.5))
    }

    /// Solves `P_perp T_i^{1/2} P_perp y_i = b_i` on `Ran(P)^perp` in closed
    /// form: `y = T^{-1/2} (b + Phi c)` with `c` fixed by `Phi^* y = 0`.
    fn inverse_half(&self, b: &CMatrix) -> Result<CMatrix> {
        let phi = self.phi.coeffs();
        let b = project_out(phi, b) * &self.rotation;
        let mut out = CMatrix::zeros(b.nrows(), b.ncols());
        for i in 0..b.ncols() {
            let t = self.shifts[i];
            let w: Vec<f64> = self.kinetic.iter().map(|k| (k + t).powf(-0.5)).collect();
            let scale = |m: &CMatrix| -> CMatrix {
                let mut m = m.clone();
                for (row, wk) in w.iter().enumerate() {
                    for col in 0..m.ncols() {
                        m[(row, col)] *= *wk;
                    }
                }
                m
            };
            let tb = scale(&b.columns(i, 1).into_owned());
            let tphi = scale(phi);
            let gram = phi.adjoint() * &tphi;
            let c = gram
                .lu()
                .solve(&(phi.adjoint() * &tb))
                .ok_or_else(|| Error::InvalidInput("metric is singular on the orbital span".into()))?;
            let y = tb - tphi * c;
            out.set_column(i, &y.column(0));
        }
        Ok(out * self.rotation.adjoint())
    }

    /// `M^s Xi` for `s` in {-1, -1/2, 1/2, 1}.
    pub fn apply_power(&self, xi: &TangentSet, s: f64) -> Result<TangentSet> {
        xi.check_gauge(&self.phi, 1e-8)?;
        let x = xi.coeffs();
        let out = if s == 0.5 {
            self.half(x)
        } else if s == 1.0 {
            self.half(&self.half(x))
        } else if s == -0.5 {
            self.inverse_half(x)?
        } else if s == -1.0 {
            self.inverse_half(&self.inverse_half(x)?)?
        } else {
            return Err(Error::InvalidInput(format!("metric power must be one of -1, -1/2, 1/2, 1 (got {s})")));
        };
        Ok(TangentSet::from_raw(out))
    }
}

pub fn apply_metric_power(metric: &OrbitalMetric, xi: &TangentSet, s: f64) -> Result<TangentSet> {
    metric.apply_power(xi, s)
}

/// Preconditioned conjugate gradients for a Hermitian positive operator
/// acting on (single- or multi-column) complex blocks with the Frobenius
/// inner product. Stops when `|b - A x| <= max(tol |b|, atol)`.
pub(crate) fn pcg_complex(
    mut apply: impl FnMut(&CMatrix) -> CMatrix,
    mut precond: impl FnMut(&CMatrix) -> CMatrix,
    b: &CMatrix,
    tol: f64,
    atol: f64,
    max_iter: usize,
    what: &'static str,
) -> Result<CMatrix> {
    let bnorm = b.norm();
    let target = (tol * bnorm).max(atol);
    let mut x = CMatrix::zeros(b.nrows(), b.ncols());
    if bnorm <= target {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dotc(&z).re;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let curv = p.dotc(&ap).re;
        if !(curv > 0.0) {
            return Err(Error::Indefinite {
                curvature: curv / p.norm_squared().max(f64::MIN_POSITIVE),
            });
        }
        let a = rz / curv;
        x += &p * Complex64::new(a, 0.0);
        r -= &ap * Complex64::new(a, 0.0);
        if r.norm() <= target {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = r.dotc(&z).re;
        p = &z + &p * Complex64::new(rz_new / rz, 0.0);
        rz = rz_new;
    }
    let res = (b - apply(&x)).norm();
    if res <= target {
        return Ok(x);
    }
    Err(Error::NotConverged {
        what,
        iterations: max_iter,
        residual: res / bnorm,
    })
}
