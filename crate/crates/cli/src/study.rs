//! Convergence study: one reference solve, then independent work per coarse cutoff.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pwap_core::estimators::{
    exact_error, norm_bound_report, operator_norm_force_bound, operator_norms, qoi_error_estimates, ErrorReport,
    EstimatorOptions, FrequencySplit, NormBounds, OperatorNorms,
};
use pwap_core::geometry::OrbitalMetric;
use pwap_core::model::{density, energy, forces};
use pwap_core::solvers::{newton_step_lifted, scf};
use pwap_core::{MeanFieldModel, OrbitalSet, PlaneWaveBasis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::archive::{write_atomic, Archive};
use crate::config::RunConfig;
use crate::csv::{num, Table};
use crate::error::CliError;

pub struct Reference {
    pub basis: PlaneWaveBasis,
    pub phi: OrbitalSet,
    pub energy: f64,
    pub forces: DMatrix<f64>,
    pub norms: OperatorNorms,
    pub cache_path: PathBuf,
    pub from_cache: bool,
}

/// Everything computed at one coarse cutoff. States are compared in the
/// reference basis.
#[derive(Debug, Clone)]
pub struct CutoffRow {
    pub n_basis: usize,
    pub scf_iterations: usize,
    pub energy_error: f64,
    pub energy_error_newton: f64,
    pub density_error: f64,
    pub density_error_newton: f64,
    /// `F - F*`, `dim x n_atoms`.
    pub force_error: DMatrix<f64>,
    pub force_error_newton: DMatrix<f64>,
    /// `|Pi_P(P - P*)|_F` and its metric counterpart `|M^{1/2} Pi_P(P - P*)|_F`.
    pub error_norm: f64,
    pub error_norm_metric: f64,
    pub bounds: NormBounds,
    pub report: ErrorReport,
    /// Operator-norm bound on each force component from `bound_plain`.
    pub force_bounds: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CutoffOutcome {
    pub cutoff: f64,
    pub result: Result<CutoffRow, Failure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// Short token for the CSV status column.
    pub status: &'static str,
    pub message: String,
}

pub struct StudyResults {
    pub reference: Reference,
    pub rows: Vec<CutoffOutcome>,
}

impl StudyResults {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }
}

pub fn cache_key(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.reference_key_material().as_bytes()))
}

/// Loads the reference ground state from `out/cache` or solves and stores it.
pub fn reference(cfg: &RunConfig, model: &MeanFieldModel, out: &Path) -> Result<Reference, CliError> {
    let fine = PlaneWaveBasis::new(model.lattice.clone(), cfg.study.reference, cfg.model.supersampling)?;
    let path = out.join("cache").join(format!("reference-{}.pwap", cache_key(cfg)));
    let cached = if path.exists() {
        match Archive::read(&path).and_then(|a| {
            let b = a.basis()?;
            if b.millers() != fine.millers() || !a.report.converged {
                return Err(CliError::Failed("cached reference does not fit the configuration".into()));
            }
            Ok((a.orbitals()?, a))
        }) {
            Ok(x) => Some(x),
            Err(e) => {
                warn!(path = %path.display(), error = %e, "ignoring unusable cached reference");
                None
            }
        }
    } else {
        None
    };
    let from_cache = cached.is_some();
    let (phi, e, f) = match cached {
        Some((phi, a)) => {
            info!(path = %path.display(), "reusing cached reference");
            (phi, a.energy, a.forces)
        }
        None => {
            info!(ecut = cfg.study.reference, n_basis = fine.len(), "solving reference");
            let (phi, report) = scf(model, &fine, &cfg.scf_options())?;
            if !report.converged {
                return Err(pwap_core::Error::NotConverged {
                    what: "reference SCF",
                    iterations: report.iterations,
                    residual: report.residual_norm,
                }
                .into());
            }
            let e = energy(model, &fine, &phi)?;
            let f = forces(model, &fine, &phi)?;
            Archive::new(&fine, &phi, e, f.clone(), report).write(&path)?;
            (phi, e, f)
        }
    };
    let norms = operator_norms(model, &fine, &phi)?;
    Ok(Reference {
        basis: fine,
        phi,
        energy: e,
        forces: f,
        norms,
        cache_path: path,
        from_cache,
    })
}

fn failure(status: &'static str) -> impl Fn(pwap_core::Error) -> Failure {
    move |e| Failure {
        status,
        message: e.to_string(),
    }
}

pub fn study_cutoff(cfg: &RunConfig, model: &MeanFieldModel, r: &Reference, ecut: f64) -> Result<CutoffRow, Failure> {
    let fine = &r.basis;
    let coarse = PlaneWaveBasis::new(model.lattice.clone(), ecut, cfg.model.supersampling).map_err(failure("error"))?;
    let (pc, rep) = scf(model, &coarse, &cfg.scf_options()).map_err(failure("scf_failed"))?;
    if !rep.converged {
        return Err(Failure {
            status: "scf_not_converged",
            message: format!("residual {:e} after {} iterations", rep.residual_norm, rep.iterations),
        });
    }
    let lifted = fine
        .lift(&coarse, pc.coeffs())
        .and_then(OrbitalSet::new)
        .map_err(failure("error"))?;
    let newton = newton_step_lifted(model, fine, &lifted, cfg.solver.linear_tol).map_err(failure("newton_failed"))?;

    let rho_ref = density(fine, r.phi.coeffs());
    let errors = |phi: &OrbitalSet| -> pwap_core::Result<(f64, f64, DMatrix<f64>)> {
        Ok((
            energy(model, fine, phi)? - r.energy,
            density(fine, phi.coeffs()).axpy(-1.0, &rho_ref).l2_norm(fine),
            forces(model, fine, phi)? - &r.forces,
        ))
    };
    let (ev, rv, fv) = errors(&lifted).map_err(failure("error"))?;
    let (en, rn, fnw) = errors(&newton).map_err(failure("error"))?;

    let est = (|| {
        let split = FrequencySplit::new(fine, ecut)?;
        let bounds = norm_bound_report(model, &split, &lifted, Some(&r.norms))?;
        let err = exact_error(&lifted, &r.phi)?;
        let metric = OrbitalMetric::new(model, fine, &lifted)?;
        let err_metric = metric.apply_power(&err, 0.5)?.norm();
        let opts = EstimatorOptions {
            tol: cfg.solver.linear_tol,
            norms: Some(r.norms),
        };
        let report = qoi_error_estimates(model, &split, &lifted, Some(&r.phi), &opts)?;
        let mut force_bounds = DMatrix::zeros(fv.nrows(), fv.ncols());
        for j in 0..fv.ncols() {
            for b in 0..fv.nrows() {
                force_bounds[(b, j)] = operator_norm_force_bound(model, fine, &lifted, j, b, bounds.bound_plain)?;
            }
        }
        Ok((bounds, err.norm(), err_metric, report, force_bounds))
    })();
    let (bounds, error_norm, error_norm_metric, report, force_bounds) = est.map_err(failure("estimator_failed"))?;

    Ok(CutoffRow {
        n_basis: coarse.len(),
        scf_iterations: rep.iterations,
        energy_error: ev,
        energy_error_newton: en,
        density_error: rv,
        density_error_newton: rn,
        force_error: fv,
        force_error_newton: fnw,
        error_norm,
        error_norm_metric,
        bounds,
        report,
        force_bounds,
    })
}

pub const CONVERGENCE_COLUMNS: &[&str] = &[
    "cutoff",
    "status",
    "n_basis",
    "scf_iterations",
    "E_err_variational",
    "E_err_newton",
    "rho_err_L2",
    "rho_err_L2_newton",
    "F_err_euclid",
    "F_err_euclid_newton",
];

pub const ESTIMATOR_COLUMNS: &[&str] = &[
    "cutoff",
    "status",
    "qoi",
    "actual",
    "estimate_exact",
    "estimate_residual",
    "estimate_schur",
    "postprocessed_err_exact",
    "postprocessed_err_residual",
    "postprocessed_err_schur",
    "bound",
];

pub const BOUND_COLUMNS: &[&str] = &[
    "cutoff",
    "status",
    "error_norm",
    "error_norm_metric",
    "residual_norm",
    "metric_residual_norm",
    "schur_norm",
    "bound_plain",
    "bound_metric",
    "inv_jacobian_norm",
    "inv_jacobian_norm_metric",
];

fn padded(head: Vec<String>, width: usize) -> Vec<String> {
    let mut v = head;
    v.resize(width, String::new());
    v
}

/// The CSV rows of one cutoff for the three tables.
fn render_rows(o: &CutoffOutcome) -> [Vec<Vec<String>>; 3] {
    let c = num(o.cutoff);
    let row = match &o.result {
        Ok(row) => row,
        Err(f) => {
            let head = vec![c, f.status.to_string()];
            return [
                vec![padded(head.clone(), CONVERGENCE_COLUMNS.len())],
                vec![padded(head.clone(), ESTIMATOR_COLUMNS.len())],
                vec![padded(head, BOUND_COLUMNS.len())],
            ];
        }
    };
    let ok = "ok".to_string();
    let conv = vec![
        c.clone(),
        ok.clone(),
        row.n_basis.to_string(),
        row.scf_iterations.to_string(),
        num(row.energy_error),
        num(row.energy_error_newton),
        num(row.density_error),
        num(row.density_error_newton),
        num(row.force_error.norm()),
        num(row.force_error_newton.norm()),
    ];

    let rep = &row.report;
    let reference = rep.reference.as_ref().expect("study reports carry reference errors");
    let est_row = |qoi: String, actual: f64, e: [Option<f64>; 3], p: [Option<f64>; 3], bound: Option<f64>| {
        let mut v = vec![c.clone(), ok.clone(), qoi, num(actual)];
        v.extend(e.iter().chain(&p).map(|x| crate::csv::opt(*x)));
        v.push(crate::csv::opt(bound));
        v
    };
    let mut est = Vec::new();
    let ep = rep.energy_postprocessed().map(|x| x - (rep.energy - reference.energy));
    est.push(est_row(
        "energy".into(),
        reference.energy,
        [rep.energy_delta.exact, Some(rep.energy_delta.residual), Some(rep.energy_delta.schur)],
        [ep.exact, Some(ep.residual), Some(ep.schur)],
        None,
    ));
    let dp = &reference.density_postprocessed;
    est.push(est_row(
        "density".into(),
        reference.density,
        [rep.density_delta.exact, Some(rep.density_delta.residual), Some(rep.density_delta.schur)],
        [dp.exact, Some(dp.residual), Some(dp.schur)],
        None,
    ));
    // reference force = F(P) - (F(P) - F*)
    let f_ref = &rep.forces - &reference.forces;
    let fp = rep.forces_postprocessed().map(|m| m - &f_ref);
    for j in 0..reference.forces.ncols() {
        for b in 0..reference.forces.nrows() {
            let at = |m: &DMatrix<f64>| m[(b, j)];
            est.push(est_row(
                format!("force_{j}_{b}"),
                reference.forces[(b, j)],
                [rep.force_delta.exact.as_ref().map(at), Some(at(&rep.force_delta.residual)), Some(at(&rep.force_delta.schur))],
                [fp.exact.as_ref().map(at), Some(at(&fp.residual)), Some(at(&fp.schur))],
                Some(row.force_bounds[(b, j)]),
            ));
        }
    }

    let nb = &row.bounds;
    let bounds = vec![
        c,
        ok,
        num(row.error_norm),
        num(row.error_norm_metric),
        num(nb.residual_norm),
        num(nb.metric_residual_norm),
        num(rep.schur_norm),
        num(nb.bound_plain),
        num(nb.bound_metric),
        num(nb.norms.plain),
        num(nb.norms.metric),
    ];
    [vec![conv], est, vec![bounds]]
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start worker threads: {e}")))
}

const TABLES: [&str; 3] = ["convergence", "estimators", "bounds"];

/// Runs the study and writes `convergence.csv`, `estimators.csv` and `bounds.csv` into `out`.
pub fn run_study(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<StudyResults, CliError> {
    let model = cfg.build_model()?;
    let reference = reference(cfg, &model, out)?;
    let parts = out.join("parts");
    let pool = thread_pool(threads)?;
    let rows: Vec<CutoffOutcome> = pool.install(|| {
        cfg.study
            .cutoffs
            .par_iter()
            .enumerate()
            .map(|(i, &ecut)| {
                let result = study_cutoff(cfg, &model, &reference, ecut);
                match &result {
                    Ok(_) => info!(ecut, "cutoff done"),
                    Err(f) => warn!(ecut, status = f.status, message = %f.message, "cutoff failed"),
                }
                let outcome = CutoffOutcome { cutoff: ecut, result };
                let rendered = render_rows(&outcome);
                for (name, rows) in TABLES.iter().zip(&rendered) {
                    let text: String = rows.iter().map(|r| r.join(",") + "\n").collect();
                    write_atomic(&parts.join(format!("{name}-{i:03}.part")), text.as_bytes())?;
                }
                Ok(outcome)
            })
            .collect::<Result<_, CliError>>()
    })?;

    for (name, columns) in TABLES.iter().zip([CONVERGENCE_COLUMNS, ESTIMATOR_COLUMNS, BOUND_COLUMNS]) {
        let mut table = Table::new(columns);
        for i in 0..rows.len() {
            let p = parts.join(format!("{name}-{i:03}.part"));
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            table.extend(text.lines().map(|l| l.split(',').map(str::to_string).collect()));
        }
        write_atomic(&out.join(format!("{name}.csv")), table.render().as_bytes())?;
    }
    std::fs::remove_dir_all(&parts).map_err(|e| CliError::io(&parts, e))?;
    Ok(StudyResults { reference, rows })
}
