//! The `pwap` binary end to end: exit codes, archives, caching and CSV contents.

use std::path::{Path, PathBuf};
use std::process::Output;

use pwap_cli::archive::Archive;
use pwap_cli::csv;
use pwap_core::{Lattice, PlaneWaveBasis};

fn pwap(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pwap"))
        .args(args)
        .env_remove("PWAP_THREADS")
        .output()
        .unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.ini");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    pwap(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    csv::parse(&std::fs::read_to_string(path).unwrap()).expect("versioned CSV")
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = table(path);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn numbers(path: &Path, name: &str) -> Vec<f64> {
    column(path, name).iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn free_electron_energy_is_sum_of_lowest_kinetic_energies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("solve", &shipped("free_electron.ini"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = Archive::read(&tmp.path().join("ground_state.pwap")).unwrap();
    let b = PlaneWaveBasis::new(Lattice::line(2.0 * std::f64::consts::PI).unwrap(), 4.0, 3).unwrap();
    let mut kin: Vec<f64> = b.g2_all().iter().map(|g| 0.5 * g).collect();
    kin.sort_by(f64::total_cmp);
    let want: f64 = kin[..3].iter().sum();
    assert!((a.energy - want).abs() < 1e-12, "{} vs {want}", a.energy);
    assert!(a.report.converged);
    assert_eq!(a.basis().unwrap().len(), b.len());
}

#[test]
fn solve_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("two_wells_gp.ini");
    assert!(run("solve", &cfg, &tmp.path().join("a")).status.success());
    assert!(run("solve", &cfg, &tmp.path().join("b")).status.success());
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("ground_state.pwap")).unwrap();
    let first = read("a");
    assert_eq!(&first[..5], b"PWAP1");
    assert_eq!(first, read("b"));
    assert!(run("solve", &cfg, &tmp.path().join("a")).status.success());
    assert_eq!(first, read("a"));
}

#[test]
fn corrupt_config_exits_with_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "[model]\ndim = 1\nlattice = six\nn_el = 1\n[study]\nreference = 8\n");
    let o = run("solve", &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!out.exists());

    let o = run("solve", &tmp.path().join("missing.ini"), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn solver_failure_exits_with_1_and_keeps_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[model]\ndim = 1\nlattice = 6\nn_el = 1\nalpha = 1\natom = 0.2 -4 0.5\n[study]\nreference = 16\n[solver]\nmax_iter = 1\n",
    );
    let o = run("solve", &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let report = std::fs::read_to_string(tmp.path().join("solve_report.txt")).unwrap();
    assert!(report.contains("status = not_converged"), "{report}");
    let a = Archive::read(&tmp.path().join("ground_state.pwap")).unwrap();
    assert!(!a.report.converged);
    assert_eq!(a.report.iterations, 1);
}

#[test]
fn study_reuses_cached_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("linear.ini");
    assert!(run("study", &cfg, tmp.path()).status.success());
    let cache: Vec<_> = std::fs::read_dir(tmp.path().join("cache")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(cache.len(), 1);
    let before = std::fs::metadata(&cache[0]).unwrap().modified().unwrap();
    let first = std::fs::read(tmp.path().join("estimators.csv")).unwrap();

    let o = run("study", &cfg, tmp.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("reusing cached reference"));
    assert_eq!(std::fs::metadata(&cache[0]).unwrap().modified().unwrap(), before);
    assert_eq!(std::fs::read(tmp.path().join("estimators.csv")).unwrap(), first);
    assert!(!tmp.path().join("parts").exists());
}

/// Newton on a linear eigenproblem is Rayleigh-quotient-like: quadratic in
/// the variational error and at solver precision once that error is small.
#[test]
fn linear_study_newton_error_is_quadratic() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("study", &shipped("linear.ini"), tmp.path()).status.success());
    let conv = tmp.path().join("convergence.csv");
    let var = numbers(&conv, "E_err_variational");
    let newton = numbers(&conv, "E_err_newton");
    for (v, n) in var.iter().zip(&newton) {
        assert!(n.abs() <= v * v, "{n} vs {v}");
    }
    assert!(newton.last().unwrap().abs() < 1e-10);
    assert!(column(&conv, "status").iter().all(|s| s == "ok"));
}

#[test]
fn gp_study_newton_beats_variational() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("study", &shipped("two_wells_gp.ini"), tmp.path()).status.success());
    let conv = tmp.path().join("convergence.csv");
    for (a, b) in [
        ("E_err_variational", "E_err_newton"),
        ("rho_err_L2", "rho_err_L2_newton"),
        ("F_err_euclid", "F_err_euclid_newton"),
    ] {
        for (v, n) in numbers(&conv, a).iter().zip(numbers(&conv, b)) {
            assert!(n.abs() <= v.abs(), "{a}: {n} vs {v}");
        }
    }
    let (h, rows) = table(&tmp.path().join("estimators.csv"));
    assert_eq!(h[..4], ["cutoff", "status", "qoi", "actual"]);
    // energy, density and one force per atom, per cutoff
    assert_eq!(rows.len(), 4 * 4);
    let bounds = tmp.path().join("bounds.csv");
    assert_eq!(numbers(&bounds, "bound_plain").len(), 4);
}

#[test]
fn failing_cutoff_becomes_a_status_row() {
    let tmp = tempfile::tempdir().unwrap();
    // one plane wave cannot hold two orbitals
    let cfg = write_config(
        tmp.path(),
        "[model]\ndim = 1\nlattice = 6\nn_el = 2\natom = 0.2 -4 0.5\n[study]\ncutoffs = 0.1 4\nreference = 16\n",
    );
    let out = tmp.path().join("out");
    let o = run("study", &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    for name in ["convergence.csv", "estimators.csv", "bounds.csv"] {
        let status = column(&out.join(name), "status");
        assert_eq!(status.first().map(String::as_str), Some("scf_failed"), "{name}");
        assert_eq!(status.last().map(String::as_str), Some("ok"), "{name}");
    }
}

#[test]
fn study_rejects_reference_below_cutoffs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("linear.ini")).unwrap().replace("reference = 64", "reference = 16");
    let o = run("study", &write_config(tmp.path(), &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("two_wells_gp.ini");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(pwap(&["study", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"])
        .status
        .success());
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_pwap"))
        .args(["study", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .env("PWAP_THREADS", "4")
        .output()
        .unwrap();
    assert!(o.status.success());
    for name in ["convergence.csv", "estimators.csv", "bounds.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn gp_check_without_potential_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\ndim = 1\n[study]\ncutoffs = 4 8 16\n");
    let o = run("gp-check", &cfg, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let norms = numbers(&tmp.path().join("prop_a1.csv"), "norm");
    assert_eq!(norms.len(), 3);
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    let (h, _) = table(&tmp.path().join("prop_a1.csv"));
    assert_eq!(h, ["N", "norm", "bound_fit", "lambda"]);
}

#[test]
fn gp_check_single_cutoff_skips_fit_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\ndim = 1\nexternal = 1 0.3\n[study]\ncutoffs = 4\n");
    let o = run("gp-check", &cfg, tmp.path());
    assert!(o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("WARN") && stderr.contains("skipped"), "{stderr}");
    assert_eq!(column(&tmp.path().join("prop_a1_fit.csv"), "slope"), [""]);
}

#[test]
fn gp_check_rejects_other_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\ndim = 2\n[study]\ncutoffs = 4 8\n");
    let o = run("gp-check", &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dim = 1"));
}

#[test]
fn every_csv_carries_the_version_line() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("study", &shipped("linear.ini"), tmp.path()).status.success());
    assert!(run("gp-check", &shipped("gp_cosine.ini"), tmp.path()).status.success());
    let mut n = 0;
    for e in std::fs::read_dir(tmp.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            assert!(std::fs::read_to_string(&p).unwrap().starts_with("# pwap-csv v1\n"));
            n += 1;
        }
    }
    assert_eq!(n, 5);
}

#[test]
fn three_dimensional_study_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("study", &shipped("silicon_like_3d.ini"), tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(column(&tmp.path().join("bounds.csv"), "status").iter().all(|s| s == "ok"));
}
