//! One Newton step on the density-matrix manifold, `P - (Omega + K)^{-1} R(P)`
//! followed by a Löwdin retraction.

use crate::basis::PlaneWaveBasis;
use crate::error::Result;
use crate::geometry::{OrbitalMetric, TangentContext};
use crate::model::MeanFieldModel;
use crate::orbitals::OrbitalSet;
use crate::solvers::linear::{solve_in_context, LinearSolve};

/// Newton step for orbitals already expressed in `basis`.
pub fn newton_step_lifted(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    tol: f64,
) -> Result<OrbitalSet> {
    let ctx = TangentContext::new(model, basis, phi)?;
    let r = ctx.residual();
    let metric = OrbitalMetric::new(model, basis, phi)?;
    let opts = LinearSolve {
        tol,
        ..LinearSolve::default()
    };
    let xi = solve_in_context(&ctx, &metric, &r, &opts, None)?;
    OrbitalSet::orthonormalize(phi.coeffs() - xi.coeffs())
}

/// Lifts coarse orbitals into `fine` by zero padding and applies one Newton step there.
pub fn newton_step(
    model: &MeanFieldModel,
    fine: &PlaneWaveBasis,
    coarse: &PlaneWaveBasis,
    phi_coarse: &OrbitalSet,
    tol: f64,
) -> Result<OrbitalSet> {
    let lifted = OrbitalSet::new(fine.lift(coarse, phi_coarse.coeffs())?)?;
    newton_step_lifted(model, fine, &lifted, tol)
}
