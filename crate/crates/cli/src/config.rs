//! Run configuration: flat `key = value` text grouped under `[section]`
//! headers. `#` and `;` start comments. `atom` and `external` may repeat.
//!
//! ```text
//! [model]
//! dim = 1
//! lattice = 6.0            # edge length, or dim*dim numbers (one cell vector after another)
//! n_el = 1
//! alpha = 1.0
//! hartree = false
//! atom = 0.2 -4.0 0.5      # fractional position (dim numbers), depth, width
//! external = 1 0.3         # Miller index (dim integers), cosine amplitude
//!
//! [study]
//! cutoffs = 4 8 16 32
//! reference = 128
//! seed = 0
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pwap_core::gp::GpOptions;
use pwap_core::solvers::{LinearSolve, ScfOptions};
use pwap_core::{Atom, FourierTerm, Lattice, MeanFieldModel};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Study,
    GpCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub dim: usize,
    /// Cell vectors as columns.
    pub lattice: DMatrix<f64>,
    pub n_el: usize,
    pub alpha: f64,
    pub hartree: bool,
    pub kinetic_prefactor: f64,
    pub atoms: Vec<Atom>,
    /// `(miller, amplitude)` of `amplitude * cos(G.x)`.
    pub external: Vec<(Vec<i64>, f64)>,
    pub supersampling: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySection {
    pub cutoffs: Vec<f64>,
    pub reference: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub damping: f64,
    pub tol: f64,
    pub eig_tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
    pub power_tol: f64,
    pub power_max_iter: usize,
    pub reference_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let scf = ScfOptions::default();
        let gp = GpOptions::default();
        Self {
            damping: scf.damping,
            tol: scf.tol,
            eig_tol: scf.eig_tol,
            max_iter: scf.max_iter,
            linear_tol: LinearSolve::default().tol,
            power_tol: gp.power_tol,
            power_max_iter: gp.power_max_iter,
            reference_factor: gp.reference_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub study: StudySection,
    pub solver: SolverSection,
    pub output: Option<PathBuf>,
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, BTreeMap<String, Vec<Entry>>>;

fn err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config {
        line: Some(line),
        msg: msg.into(),
    }
}

fn tokenize(text: &str) -> Result<Sections, CliError> {
    let mut out = Sections::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim();
            if !["model", "study", "solver", "output"].contains(&name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            out.entry(name.to_string()).or_default();
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, found `{body}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err(line, "empty key"));
        }
        let sec = section
            .as_ref()
            .ok_or_else(|| err(line, format!("`{key}` appears before any [section]")))?;
        let keys = out.get_mut(sec).expect("section registered");
        let entries = keys.entry(key.to_string()).or_default();
        if !entries.is_empty() && key != "atom" && key != "external" {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        entries.push(Entry {
            line,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

struct Section<'a> {
    name: &'static str,
    keys: Option<&'a BTreeMap<String, Vec<Entry>>>,
    allowed: &'static [&'static str],
}

impl<'a> Section<'a> {
    fn new(all: &'a Sections, name: &'static str, allowed: &'static [&'static str]) -> Result<Self, CliError> {
        let keys = all.get(name);
        if let Some(keys) = keys {
            for (k, entries) in keys {
                if !allowed.contains(&k.as_str()) {
                    return Err(err(entries[0].line, format!("unknown key `{k}` in [{name}]")));
                }
            }
        }
        Ok(Self { name, keys, allowed })
    }

    fn entries(&self, key: &str) -> &[Entry] {
        debug_assert!(self.allowed.contains(&key));
        self.keys.and_then(|k| k.get(key)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<(T, usize)>, CliError> {
        match self.entries(key).first() {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(|v| Some((v, e.line)))
                .map_err(|_| err(e.line, format!("cannot parse `{}` as the value of {key}", e.value))),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.parsed(key)?.map(|(v, _)| v).unwrap_or(default))
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<(T, usize), CliError> {
        self.parsed(key)?.ok_or_else(|| CliError::Config {
            line: None,
            msg: format!("missing `{key}` in [{}]", self.name),
        })
    }
}

fn numbers<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<Vec<T>, CliError> {
    e.value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| err(e.line, format!("cannot parse `{t}` in {what}"))))
        .collect()
}

fn positive(v: f64, line: usize, what: &str) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(err(line, format!("{what} must be positive")))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path, command: Command) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            line: None,
            msg: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text, command)
    }

    /// Parses and validates the parts of the configuration `command` uses.
    pub fn parse(text: &str, command: Command) -> Result<Self, CliError> {
        let all = tokenize(text)?;
        let m = Section::new(
            &all,
            "model",
            &[
                "dim",
                "lattice",
                "n_el",
                "alpha",
                "hartree",
                "kinetic",
                "atom",
                "external",
                "supersampling",
            ],
        )?;
        let s = Section::new(&all, "study", &["cutoffs", "reference", "seed"])?;
        let v = Section::new(
            &all,
            "solver",
            &[
                "damping",
                "tol",
                "eig_tol",
                "max_iter",
                "linear_tol",
                "power_tol",
                "power_max_iter",
                "reference_factor",
            ],
        )?;
        let o = Section::new(&all, "output", &["dir"])?;

        let (dim, dim_line) = m.parsed::<usize>("dim")?.unwrap_or((1, 0));
        if !(1..=3).contains(&dim) {
            return Err(err(dim_line, format!("dim must be 1, 2 or 3 (got {dim})")));
        }
        if command == Command::GpCheck && dim != 1 {
            return Err(err(dim_line, "gp-check needs the one-dimensional model (dim = 1)"));
        }

        let lattice = match m.entries("lattice").first() {
            Some(e) => {
                let vals: Vec<f64> = numbers(e, "lattice")?;
                let mat = if vals.len() == 1 {
                    DMatrix::from_diagonal_element(dim, dim, vals[0])
                } else if vals.len() == dim * dim {
                    DMatrix::from_column_slice(dim, dim, &vals)
                } else {
                    return Err(err(e.line, format!("lattice needs 1 or {} numbers", dim * dim)));
                };
                Lattice::new(mat.clone()).map_err(|x| err(e.line, x.to_string()))?;
                if command == Command::GpCheck && (mat[(0, 0)] - 2.0 * PI).abs() > 1e-12 {
                    return Err(err(e.line, "gp-check works on the cell [0, 2 pi); omit `lattice`"));
                }
                mat
            }
            None if command == Command::GpCheck => DMatrix::from_element(1, 1, 2.0 * PI),
            None => {
                return Err(CliError::Config {
                    line: None,
                    msg: "missing `lattice` in [model]".into(),
                })
            }
        };

        let mut atoms = Vec::new();
        for e in m.entries("atom") {
            let vals: Vec<f64> = numbers(e, "atom")?;
            if vals.len() != dim + 2 {
                return Err(err(e.line, format!("atom needs {dim} coordinates, depth and width")));
            }
            positive(vals[dim + 1], e.line, "atom width")?;
            atoms.push(Atom {
                position: vals[..dim].to_vec(),
                depth: vals[dim],
                width: vals[dim + 1],
            });
        }
        let mut external = Vec::new();
        for e in m.entries("external") {
            let toks: Vec<&str> = e.value.split_whitespace().collect();
            if toks.len() != dim + 1 {
                return Err(err(e.line, format!("external needs {dim} Miller indices and an amplitude")));
            }
            let miller = toks[..dim]
                .iter()
                .map(|t| t.parse::<i64>().map_err(|_| err(e.line, format!("`{t}` is not an integer"))))
                .collect::<Result<Vec<_>, _>>()?;
            let amp = toks[dim]
                .parse::<f64>()
                .map_err(|_| err(e.line, format!("cannot parse amplitude `{}`", toks[dim])))?;
            external.push((miller, amp));
        }
        if command == Command::GpCheck && !atoms.is_empty() {
            return Err(err(m.entries("atom")[0].line, "gp-check takes only an external potential"));
        }

        let n_el = m.get("n_el", 1usize)?;
        let alpha = m.get("alpha", 0.0f64)?;
        let hartree = m.get("hartree", false)?;
        let kinetic_prefactor = m.get("kinetic", 0.5f64)?;
        let supersampling = m.get("supersampling", 3usize)?;
        if supersampling < 2 {
            let line = m.parsed::<usize>("supersampling")?.map(|x| x.1).unwrap_or(0);
            return Err(err(line, "supersampling must be at least 2"));
        }

        let cutoffs = match s.entries("cutoffs").first() {
            Some(e) => {
                let c: Vec<f64> = numbers(e, "cutoffs")?;
                if c.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(err(e.line, "cutoffs must be positive"));
                }
                if c.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(err(e.line, "cutoffs must be strictly increasing"));
                }
                c
            }
            None => Vec::new(),
        };
        if command != Command::Solve && cutoffs.is_empty() {
            return Err(CliError::Config {
                line: None,
                msg: "missing `cutoffs` in [study]".into(),
            });
        }
        let reference = match command {
            Command::GpCheck => s.get("reference", 0.0)?,
            _ => {
                let (r, line) = s.require::<f64>("reference")?;
                positive(r, line, "reference cutoff")?;
                if let Some(max) = cutoffs.last() {
                    if r <= *max {
                        return Err(err(line, format!("reference cutoff {r} must exceed the largest cutoff {max}")));
                    }
                }
                r
            }
        };
        let seed = s.get("seed", 0u64)?;

        let d = SolverSection::default();
        let solver = SolverSection {
            damping: v.get("damping", d.damping)?,
            tol: v.get("tol", d.tol)?,
            eig_tol: v.get("eig_tol", d.eig_tol)?,
            max_iter: v.get("max_iter", d.max_iter)?,
            linear_tol: v.get("linear_tol", d.linear_tol)?,
            power_tol: v.get("power_tol", d.power_tol)?,
            power_max_iter: v.get("power_max_iter", d.power_max_iter)?,
            reference_factor: v.get("reference_factor", d.reference_factor)?,
        };
        for (key, val) in [
            ("tol", solver.tol),
            ("eig_tol", solver.eig_tol),
            ("linear_tol", solver.linear_tol),
            ("power_tol", solver.power_tol),
            ("reference_factor", solver.reference_factor),
        ] {
            if !(val.is_finite() && val > 0.0) {
                let line = v.parsed::<f64>(key)?.map(|x| x.1).unwrap_or(0);
                return Err(err(line, format!("{key} must be positive")));
            }
        }
        if !(solver.damping > 0.0 && solver.damping <= 1.0) {
            let line = v.parsed::<f64>("damping")?.map(|x| x.1).unwrap_or(0);
            return Err(err(line, "damping must lie in (0, 1]"));
        }

        let output = o.parsed::<String>("dir")?.map(|(p, _)| PathBuf::from(p));
        let cfg = Self {
            model: ModelSection {
                dim,
                lattice,
                n_el,
                alpha,
                hartree,
                kinetic_prefactor,
                atoms,
                external,
                supersampling,
            },
            study: StudySection {
                cutoffs,
                reference,
                seed,
            },
            solver,
            output,
        };
        if command != Command::GpCheck {
            cfg.build_model().map_err(|e| CliError::Config {
                line: None,
                msg: format!("invalid model: {e}"),
            })?;
        }
        Ok(cfg)
    }

    pub fn build_model(&self) -> pwap_core::Result<MeanFieldModel> {
        let m = &self.model;
        let model = MeanFieldModel::new(Lattice::new(m.lattice.clone())?, m.atoms.clone(), m.n_el)?
            .with_alpha(m.alpha)?
            .with_hartree(m.hartree)
            .with_kinetic_prefactor(m.kinetic_prefactor)?
            .with_external(self.external_terms());
        model.validate()?;
        Ok(model)
    }

    pub fn external_terms(&self) -> Vec<FourierTerm> {
        self.model
            .external
            .iter()
            .flat_map(|(miller, amp)| {
                let mut mi = [0i64; 3];
                mi[..miller.len()].copy_from_slice(miller);
                FourierTerm::cosine(mi, *amp)
            })
            .collect()
    }

    pub fn scf_options(&self) -> ScfOptions {
        ScfOptions {
            damping: self.solver.damping,
            max_iter: self.solver.max_iter,
            tol: self.solver.tol,
            eig_tol: self.solver.eig_tol,
            seed: self.study.seed,
        }
    }

    pub fn gp_options(&self) -> GpOptions {
        GpOptions {
            reference_factor: self.solver.reference_factor,
            power_tol: self.solver.power_tol,
            power_max_iter: self.solver.power_max_iter,
            supersampling: self.model.supersampling,
            scf: self.scf_options(),
        }
    }

    /// Canonical text of everything the reference ground state depends on.
    pub fn reference_key_material(&self) -> String {
        let m = &self.model;
        let mut s = format!(
            "dim={}\nlattice={:?}\nn_el={}\nalpha={:e}\nhartree={}\nkinetic={:e}\nsupersampling={}\nreference={:e}\n",
            m.dim,
            m.lattice.as_slice(),
            m.n_el,
            m.alpha,
            m.hartree,
            m.kinetic_prefactor,
            m.supersampling,
            self.study.reference
        );
        for a in &m.atoms {
            s += &format!("atom={:?} {:e} {:e}\n", a.position, a.depth, a.width);
        }
        for (mi, amp) in &m.external {
            s += &format!("external={mi:?} {amp:e}\n");
        }
        let v = &self.solver;
        s += &format!(
            "scf={:e} {:e} {:e} {} {}\n",
            v.damping, v.tol, v.eig_tol, v.max_iter, self.study.seed
        );
        s
    }
}
