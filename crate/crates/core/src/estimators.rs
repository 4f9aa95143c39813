//! A posteriori error bounds and estimates: operator-norm bounds on the
//! density-matrix error, linearized errors on quantities of interest, and the
//! two-grid Schur-complement residual.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::geometry::{project_out, OrbitalMetric, TangentContext};
use crate::model::{
    apply_force_operator, density, energy, forces, force_derivative, tangent_density, MeanFieldModel,
};
use crate::orbitals::{CMatrix, OrbitalSet, TangentSet};
use crate::solvers::linear::{apply_mask, check_support, coarse_mask, solve_in_context, LinearSolve};
use crate::solvers::lobpcg::{lobpcg_block, random_block, LobpcgOptions};

/// Split of the fine basis into the coarse sphere ("1") and its complement ("2").
#[derive(Debug, Clone)]
pub struct FrequencySplit {
    pub ecut: f64,
    pub fine: PlaneWaveBasis,
    mask: Vec<bool>,
}

impl FrequencySplit {
    pub fn new(fine: &PlaneWaveBasis, ecut: f64) -> Result<Self> {
        if !(ecut > 0.0) || ecut > fine.ecut() {
            return Err(Error::InvalidInput(format!(
                "coarse cutoff {ecut} must be positive and at most the fine cutoff {}",
                fine.ecut()
            )));
        }
        Ok(Self {
            ecut,
            fine: fine.clone(),
            mask: coarse_mask(fine, ecut),
        })
    }

    /// `true` for rows of the coarse block.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn low(&self, x: &CMatrix) -> CMatrix {
        apply_mask(&self.mask, x)
    }

    pub fn high(&self, x: &CMatrix) -> CMatrix {
        x - self.low(x)
    }
}

/// `-P_perp P_ref Phi`: orbital form of `Pi_P(P - P_ref)`.
pub fn exact_error(phi: &OrbitalSet, reference: &OrbitalSet) -> Result<TangentSet> {
    if phi.n_basis() != reference.n_basis() || phi.n_el() != reference.n_el() {
        return Err(Error::BasisMismatch("reference orbitals have a different shape".into()));
    }
    let r = reference.coeffs();
    let raw = -(r * (r.adjoint() * phi.coeffs()));
    Ok(TangentSet::from_raw(project_out(phi.coeffs(), &raw)))
}

fn embed(x: &CMatrix) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(2 * n, |i, _| if i < n { x[i].re } else { x[i - n].im })
}

fn unembed(v: &DVector<f64>, rows: usize, cols: usize) -> CMatrix {
    let n = rows * cols;
    CMatrix::from_fn(rows, cols, |i, j| {
        let k = i + j * rows;
        Complex64::new(v[k], v[k + n])
    })
}

fn map_columns(m: &DMatrix<f64>, rows: usize, cols: usize, mut f: impl FnMut(&CMatrix) -> CMatrix) -> DMatrix<f64> {
    let outs: Vec<DVector<f64>> = m
        .column_iter()
        .map(|c| embed(&f(&unembed(&c.into_owned(), rows, cols))))
        .collect();
    DMatrix::from_columns(&outs)
}

/// Smallest eigenvalue of a symmetric R-linear tangent-space operator.
fn smallest_tangent_eigenvalue(
    phi: &OrbitalSet,
    mut apply: impl FnMut(&CMatrix) -> Result<CMatrix>,
    precond: Option<&[f64]>,
) -> Result<f64> {
    let (rows, cols) = (phi.n_basis(), phi.n_el());
    let dim = 2 * rows * cols - cols * cols;
    let block = 3.min(dim);
    if block == 0 {
        return Err(Error::InvalidInput("tangent space is trivial".into()));
    }
    let mut failure = None;
    let phi_c = phi.coeffs();
    let out = lobpcg_block(
        |m: &DMatrix<f64>| {
            map_columns(m, rows, cols, |x| match apply(x) {
                Ok(y) => y,
                Err(e) => {
                    failure.get_or_insert(e);
                    x.clone()
                }
            })
        },
        |r: &DMatrix<f64>, _: &[f64]| match precond {
            Some(d) => map_columns(r, rows, cols, |x| {
                let mut y = x.clone();
                for (i, s) in d.iter().enumerate() {
                    for j in 0..cols {
                        y[(i, j)] /= s + 1.0;
                    }
                }
                project_out(phi_c, &y)
            }),
            None => r.clone(),
        },
        |m: &mut DMatrix<f64>| *m = map_columns(m, rows, cols, |x| project_out(phi_c, x)),
        random_block::<f64>(2 * rows * cols, block, 17),
        &LobpcgOptions {
            tol: 1e-9,
            max_iter: 500,
            seed: 17,
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    if !out.converged {
        return Err(Error::NotConverged {
            what: "tangent-space LOBPCG",
            iterations: out.iterations,
            residual: out.residuals.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok(out.eigenvalues[0])
}

/// `|((Omega + K)|_T)^{-1}|_op = 1/lambda_min`, or with a metric
/// `|M^{1/2} (Omega+K)^{-1} M^{1/2}|_op`, obtained as the reciprocal of the
/// smallest eigenvalue of `M^{-1/2} (Omega + K) M^{-1/2}`.
pub fn inv_jacobian_norm(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    metric: Option<&OrbitalMetric>,
) -> Result<f64> {
    let ctx = TangentContext::new(model, basis, phi)?;
    let lam = match metric {
        None => {
            let kin: Vec<f64> = basis.g2_all().iter().map(|g| model.kinetic_prefactor * g).collect();
            smallest_tangent_eigenvalue(phi, |x| Ok(ctx.omega_plus_k_unchecked(x)), Some(&kin))?
        }
        Some(m) => smallest_tangent_eigenvalue(
            phi,
            |x| {
                let y = m.apply_power(&TangentSet::from_raw(x.clone()), -0.5)?;
                let z = TangentSet::from_raw(ctx.omega_plus_k_unchecked(y.coeffs()));
                Ok(m.apply_power(&z, -0.5)?.into_coeffs())
            },
            None,
        )?,
    };
    if !(lam > 0.0) {
        return Err(Error::Indefinite { curvature: lam });
    }
    Ok(1.0 / lam)
}

/// Plain and metric inverse-Jacobian norms, usually evaluated once at a reference state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNorms {
    pub plain: f64,
    pub metric: f64,
}

pub fn operator_norms(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet) -> Result<OperatorNorms> {
    let metric = OrbitalMetric::new(model, basis, phi)?;
    Ok(OperatorNorms {
        plain: inv_jacobian_norm(model, basis, phi, None)?,
        metric: inv_jacobian_norm(model, basis, phi, Some(&metric))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBounds {
    /// `|(Omega+K)^{-1}| |R|_F`, bounds `|Pi_P(P - P*)|_F`.
    pub bound_plain: f64,
    /// `|M^{1/2}(Omega+K)^{-1}M^{1/2}| |M^{-1/2} R|_F`, bounds `|M^{1/2} Pi_P(P - P*)|_F`.
    pub bound_metric: f64,
    pub residual_norm: f64,
    /// `|M^{-1/2} R|_F`, itself an estimate of `|M^{1/2} Pi_P(P - P*)|_F`.
    pub metric_residual_norm: f64,
    pub norms: OperatorNorms,
}

/// Residual-based bounds at `phi` (given in the fine basis). The operator
/// norms are computed at `phi` unless supplied.
pub fn norm_bound_report(
    model: &MeanFieldModel,
    split: &FrequencySplit,
    phi: &OrbitalSet,
    norms: Option<&OperatorNorms>,
) -> Result<NormBounds> {
    let basis = &split.fine;
    let ctx = TangentContext::new(model, basis, phi)?;
    let metric = OrbitalMetric::from_context(&ctx);
    let r = ctx.residual();
    let mr = metric.apply_power(&r, -0.5)?;
    let norms = match norms {
        Some(n) => *n,
        None => operator_norms(model, basis, phi)?,
    };
    Ok(NormBounds {
        bound_plain: norms.plain * r.norm(),
        bound_metric: norms.metric * mr.norm(),
        residual_norm: r.norm(),
        metric_residual_norm: mr.norm(),
        norms,
    })
}

fn schur_in_context(
    ctx: &TangentContext,
    metric: &OrbitalMetric,
    split: &FrequencySplit,
    tol: f64,
) -> Result<TangentSet> {
    check_support(split.mask(), ctx.phi())?;
    let r = ctx.residual();
    let r1 = split.low(r.coeffs());
    let r2 = split.high(r.coeffs());
    // high block: M_22 is diagonal there because Phi lives on the coarse sphere
    let y2 = split.high(&metric.apply_t_power(&r2, -1.0));
    let rhs1 = r1 - split.low(&ctx.omega_plus_k_unchecked(&y2));
    // rhs1 can be far smaller than R itself, so accuracy is measured against R
    let opts = LinearSolve {
        tol,
        atol: tol * r.coeffs().norm(),
        ..LinearSolve::default()
    };
    let y1 = solve_in_context(ctx, metric, &TangentSet::from_raw(rhs1), &opts, Some(split.mask()))?;
    Ok(TangentSet::from_raw(y1.coeffs() + y2))
}

/// `R_Schur`: block-triangular approximation of `(Omega+K)^{-1} R` with
/// `(Omega+K)_21 ~ 0` and `(Omega+K)_22 ~ M_22`.
pub fn schur_residual(model: &MeanFieldModel, split: &FrequencySplit, phi: &OrbitalSet, tol: f64) -> Result<TangentSet> {
    let ctx = TangentContext::new(model, &split.fine, phi)?;
    let metric = OrbitalMetric::from_context(&ctx);
    schur_in_context(&ctx, &metric, split, tol)
}

/// One quantity evaluated for each error proxy `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates<T> {
    /// From `Pi_P(P - P*)`, when a reference is available.
    pub exact: Option<T>,
    /// From `M^{-1} R(P)`.
    pub residual: T,
    /// From `R_Schur(P)`.
    pub schur: T,
}

impl<T> Estimates<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Estimates<U> {
        Estimates {
            exact: self.exact.as_ref().map(&mut f),
            residual: f(&self.residual),
            schur: f(&self.schur),
        }
    }
}

/// Errors measured against a reference ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceErrors {
    /// `E(P) - E*`.
    pub energy: f64,
    /// `|rho_P - rho*|_{L2}`.
    pub density: f64,
    /// `F(P) - F*`.
    pub forces: DMatrix<f64>,
    /// `|rho_P - rho_X - rho*|_{L2}` for each proxy `X`.
    pub density_postprocessed: Estimates<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub energy: f64,
    pub forces: DMatrix<f64>,
    /// `dE(P) . X = <R(P), X>_F`.
    pub energy_delta: Estimates<f64>,
    /// `|rho_X|_{L2}`.
    pub density_delta: Estimates<f64>,
    /// `dF(P) . X`.
    pub force_delta: Estimates<DMatrix<f64>>,
    pub reference: Option<ReferenceErrors>,
    pub residual_norm: f64,
    pub metric_residual_norm: f64,
    pub schur_norm: f64,
    pub norms: Option<OperatorNorms>,
}

impl ErrorReport {
    /// `E(P) - dE(P) . X`.
    pub fn energy_postprocessed(&self) -> Estimates<f64> {
        self.energy_delta.map(|d| self.energy - d)
    }

    /// `F(P) - dF(P) . X`.
    pub fn forces_postprocessed(&self) -> Estimates<DMatrix<f64>> {
        self.force_delta.map(|d| &self.forces - d)
    }

    /// Every scalar of the report with a stable name, in a fixed order.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = vec![("energy".to_string(), self.energy)];
        let push_est = |out: &mut Vec<(String, f64)>, name: &str, e: &Estimates<f64>| {
            if let Some(x) = e.exact {
                out.push((format!("{name}_exact"), x));
            }
            out.push((format!("{name}_residual"), e.residual));
            out.push((format!("{name}_schur"), e.schur));
        };
        push_est(&mut out, "energy_delta", &self.energy_delta);
        push_est(&mut out, "density_delta", &self.density_delta);
        for j in 0..self.forces.ncols() {
            for b in 0..self.forces.nrows() {
                out.push((format!("force_{j}_{b}"), self.forces[(b, j)]));
                push_est(&mut out, &format!("force_delta_{j}_{b}"), &self.force_delta.map(|m| m[(b, j)]));
            }
        }
        if let Some(r) = &self.reference {
            out.push(("energy_error".into(), r.energy));
            out.push(("density_error".into(), r.density));
            for j in 0..r.forces.ncols() {
                for b in 0..r.forces.nrows() {
                    out.push((format!("force_error_{j}_{b}"), r.forces[(b, j)]));
                }
            }
            push_est(&mut out, "density_postprocessed_error", &r.density_postprocessed);
        }
        out.push(("residual_norm".into(), self.residual_norm));
        out.push(("metric_residual_norm".into(), self.metric_residual_norm));
        out.push(("schur_norm".into(), self.schur_norm));
        if let Some(n) = &self.norms {
            out.push(("inv_jacobian_norm".into(), n.plain));
            out.push(("inv_jacobian_norm_metric".into(), n.metric));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub tol: f64,
    pub norms: Option<OperatorNorms>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { tol: 1e-12, norms: None }
    }
}

/// Linearized errors on energy, density and forces for `phi` (given in the
/// fine basis of `split`, supported on its coarse sphere).
pub fn qoi_error_estimates(
    model: &MeanFieldModel,
    split: &FrequencySplit,
    phi: &OrbitalSet,
    reference: Option<&OrbitalSet>,
    opts: &EstimatorOptions,
) -> Result<ErrorReport> {
    let basis = &split.fine;
    let ctx = TangentContext::new(model, basis, phi)?;
    let metric = OrbitalMetric::from_context(&ctx);
    let r = ctx.residual();
    let res = metric.apply_power(&r, -1.0)?;
    let schur = schur_in_context(&ctx, &metric, split, opts.tol)?;
    let exact = reference.map(|p| exact_error(phi, p)).transpose()?;
    let proxies = Estimates {
        exact,
        residual: res,
        schur,
    };

    let e = energy(model, basis, phi)?;
    let f = forces(model, basis, phi)?;
    let energy_delta = proxies.map(|x| r.dot(x));
    let density_delta = proxies.map(|x| tangent_density(basis, phi.coeffs(), x.coeffs()).l2_norm(basis));
    let mut fd_err = None;
    let force_delta = proxies.map(|x| match force_derivative(model, basis, phi, x) {
        Ok(m) => m,
        Err(err) => {
            fd_err.get_or_insert(err);
            DMatrix::zeros(f.nrows(), f.ncols())
        }
    });
    if let Some(err) = fd_err {
        return Err(err);
    }

    let reference = match reference {
        Some(p) => {
            let rho = density(basis, phi.coeffs());
            let rho_ref = density(basis, p.coeffs());
            let diff = rho.axpy(-1.0, &rho_ref);
            let post = proxies.map(|x| {
                let rx = tangent_density(basis, phi.coeffs(), x.coeffs());
                diff.axpy(-1.0, &rx).l2_norm(basis)
            });
            Some(ReferenceErrors {
                energy: e - energy(model, basis, p)?,
                density: diff.l2_norm(basis),
                forces: &f - forces(model, basis, p)?,
                density_postprocessed: post,
            })
        }
        None => None,
    };

    Ok(ErrorReport {
        energy: e,
        forces: f,
        energy_delta,
        density_delta,
        force_delta,
        reference,
        residual_norm: r.norm(),
        metric_residual_norm: metric.apply_power(&r, -0.5)?.norm(),
        schur_norm: proxies.schur.norm(),
        norms: opts.norms,
    })
}

/// `|Pi_P dV/dX_{j,beta}|_F * error_norm`, the Cauchy-Schwarz bound on the
/// force error for an estimate `error_norm` of `|Pi_P(P - P*)|_F`.
pub fn operator_norm_force_bound(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    atom: usize,
    direction: usize,
    error_norm: f64,
) -> Result<f64> {
    if atom >= model.atoms.len() || direction >= basis.dim() {
        return Err(Error::InvalidInput(format!("no force component ({atom}, {direction})")));
    }
    let dv = apply_force_operator(model, basis, atom, direction, phi.coeffs());
    let proj = TangentSet::from_raw(project_out(phi.coeffs(), &dv));
    Ok(proj.norm() * error_norm)
}
