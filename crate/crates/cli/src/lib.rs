//! Experiment driver: ground-state archives, convergence studies and the
//! GP difference-operator check, all written as files under one output directory.

pub mod archive;
pub mod config;
pub mod csv;
pub mod error;
pub mod study;

use std::path::Path;

use pwap_core::gp::{verify_proposition, GpVerification};
use pwap_core::model::{energy, forces};
use pwap_core::solvers::scf;
use pwap_core::PlaneWaveBasis;
use tracing::{info, warn};

pub use config::{Command, RunConfig};
pub use error::CliError;

use crate::archive::{write_atomic, Archive};
use crate::csv::{num, opt, Table};

pub const ARCHIVE_NAME: &str = "ground_state.pwap";
pub const SOLVE_REPORT_NAME: &str = "solve_report.txt";

/// Solves at the reference cutoff and writes the archive plus a plain-text
/// report. The report is written even when the solver fails.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<Archive, CliError> {
    let model = cfg.build_model()?;
    let basis = PlaneWaveBasis::new(model.lattice.clone(), cfg.study.reference, cfg.model.supersampling)?;
    let report_path = out.join(SOLVE_REPORT_NAME);
    let (phi, report) = match scf(&model, &basis, &cfg.scf_options()) {
        Ok(x) => x,
        Err(e) => {
            write_atomic(&report_path, format!("status = failed\nerror = {e}\n").as_bytes())?;
            return Err(e.into());
        }
    };
    let e = energy(&model, &basis, &phi)?;
    let f = forces(&model, &basis, &phi)?;
    let archive = Archive::new(&basis, &phi, e, f, report.clone());
    archive.write(&out.join(ARCHIVE_NAME))?;
    let status = if report.converged { "converged" } else { "not_converged" };
    let text = format!(
        "status = {status}\nn_basis = {}\niterations = {}\nresidual_norm = {}\nenergy = {}\n",
        basis.len(),
        report.iterations,
        num(report.residual_norm),
        num(e)
    );
    write_atomic(&report_path, text.as_bytes())?;
    info!(energy = e, iterations = report.iterations, status, "solve finished");
    if !report.converged {
        return Err(pwap_core::Error::NotConverged {
            what: "SCF",
            iterations: report.iterations,
            residual: report.residual_norm,
        }
        .into());
    }
    Ok(archive)
}

pub const GP_COLUMNS: &[&str] = &["N", "norm", "bound_fit", "lambda"];
pub const GP_FIT_COLUMNS: &[&str] = &["reference_ecut", "slope", "bound_constant"];

/// Writes `prop_a1.csv` (one row per cutoff) and `prop_a1_fit.csv`.
pub fn cmd_gp_check(cfg: &RunConfig, out: &Path) -> Result<GpVerification, CliError> {
    let v = verify_proposition(&cfg.external_terms(), &cfg.study.cutoffs, &cfg.gp_options())?;
    if v.slope.is_none() {
        warn!("only one cutoff given; decay fit skipped");
    }
    let mut t = Table::new(GP_COLUMNS);
    for (((n, norm), fit), lambda) in v.cutoffs.iter().zip(&v.norms).zip(v.bound_fit()).zip(&v.lambdas) {
        t.push(vec![num(*n), num(*norm), num(fit), num(*lambda)]);
    }
    write_atomic(&out.join("prop_a1.csv"), t.render().as_bytes())?;
    let mut fit = Table::new(GP_FIT_COLUMNS);
    fit.push(vec![num(v.reference_ecut), opt(v.slope), num(v.bound_constant)]);
    write_atomic(&out.join("prop_a1_fit.csv"), fit.render().as_bytes())?;
    Ok(v)
}
