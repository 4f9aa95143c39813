//! Tangent-space solves with the Jacobian `Omega + K` of the residual map.

use num_complex::Complex64;

use crate::basis::PlaneWaveBasis;
use crate::error::{Error, Result};
use crate::geometry::{pcg_complex, project_out, OrbitalMetric, TangentContext};
use crate::model::MeanFieldModel;
use crate::orbitals::{CMatrix, OrbitalSet, TangentSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolve {
    /// Residual target `|(Omega+K) Xi - rhs| <= max(tol |rhs|, atol)`.
    pub tol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolve {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            atol: 0.0,
            max_iter: 1000,
        }
    }
}

/// Rows of the basis with `|G|^2/2 <= ecut`.
pub fn coarse_mask(basis: &PlaneWaveBasis, ecut: f64) -> Vec<bool> {
    basis.g2_all().iter().map(|g2| 0.5 * g2 <= ecut).collect()
}

pub(crate) fn apply_mask(mask: &[bool], x: &CMatrix) -> CMatrix {
    let mut out = x.clone();
    for (i, keep) in mask.iter().enumerate() {
        if !keep {
            out.row_mut(i).fill(Complex64::new(0.0, 0.0));
        }
    }
    out
}

/// Fails unless `phi` vanishes outside the mask.
pub(crate) fn check_support(mask: &[bool], phi: &OrbitalSet) -> Result<()> {
    let leak: f64 = mask
        .iter()
        .enumerate()
        .filter(|(_, keep)| !**keep)
        .map(|(i, _)| phi.coeffs().row(i).norm_squared())
        .sum::<f64>()
        .sqrt();
    if leak > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "orbitals are not supported on the coarse sphere (outside norm {leak:e})"
        )));
    }
    Ok(())
}

/// CG on the tangent space preconditioned by `M^{-1}`; with `mask`, the
/// operator, right-hand side and iterates are confined to the masked rows.
pub fn solve_in_context(
    ctx: &TangentContext,
    metric: &OrbitalMetric,
    rhs: &TangentSet,
    opts: &LinearSolve,
    mask: Option<&[bool]>,
) -> Result<TangentSet> {
    rhs.check_gauge(ctx.phi(), 1e-8)?;
    let restrict = |x: &CMatrix| match mask {
        Some(m) => apply_mask(m, x),
        None => x.clone(),
    };
    if let Some(m) = mask {
        check_support(m, ctx.phi())?;
    }
    // a residual computed as `H Phi - Phi Lambda` keeps a component along `Phi` of the
    // size of rounding in `H Phi`, which CG on the tangent space cannot remove
    let b = restrict(&project_out(ctx.phi().coeffs(), rhs.coeffs()));
    let mut precond_err = None;
    let x = pcg_complex(
        |x| restrict(&ctx.omega_plus_k_unchecked(&restrict(x))),
        |r| match metric.apply_power(&TangentSet::from_raw(r.clone()), -1.0) {
            Ok(z) => restrict(z.coeffs()),
            Err(e) => {
                precond_err.get_or_insert(e);
                r.clone()
            }
        },
        &b,
        opts.tol,
        opts.atol,
        opts.max_iter,
        "tangent-space CG",
    )?;
    if let Some(e) = precond_err {
        return Err(e);
    }
    Ok(TangentSet::from_raw(x))
}

/// Solves `(Omega(P) + K(P)) Xi = rhs` on the tangent space at `P = Phi Phi^*`.
/// With `restrict_to_coarse = Some(ecut)` only the components with
/// `|G|^2/2 <= ecut` take part (requires `Phi` supported there).
pub fn solve_omega_plus_k(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    rhs: &TangentSet,
    tol: f64,
    restrict_to_coarse: Option<f64>,
) -> Result<TangentSet> {
    let ctx = TangentContext::new(model, basis, phi)?;
    let metric = OrbitalMetric::new(model, basis, phi)?;
    let mask = restrict_to_coarse.map(|e| coarse_mask(basis, e));
    let opts = LinearSolve {
        tol,
        ..LinearSolve::default()
    };
    solve_in_context(&ctx, &metric, rhs, &opts, mask.as_deref())
}
