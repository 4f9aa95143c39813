//! Ground-state archive. Little-endian throughout:
//!
//! ```text
//! "PWAP1"
//! u32 dim, f64 lattice[dim*dim] (cell vectors as columns), f64 ecut, u32 supersampling
//! u64 n_basis, i64 miller[n_basis*dim]
//! u64 n_el, (f64 re, f64 im)[n_basis*n_el] column by column
//! f64 energy
//! u64 n_atoms, f64 forces[dim*n_atoms] atom by atom
//! u8 converged, u64 iterations, f64 residual_norm, u64 n_energies, f64 energies[n_energies]
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use pwap_core::solvers::SolveReport;
use pwap_core::{CMatrix, Lattice, OrbitalSet, PlaneWaveBasis};

use crate::error::CliError;

pub const MAGIC: &[u8; 5] = b"PWAP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub lattice: DMatrix<f64>,
    pub ecut: f64,
    pub supersampling: usize,
    pub millers: Vec<Vec<i64>>,
    pub coeffs: CMatrix,
    pub energy: f64,
    /// `dim x n_atoms`.
    pub forces: DMatrix<f64>,
    pub report: SolveReport,
}

impl Archive {
    pub fn new(basis: &PlaneWaveBasis, phi: &OrbitalSet, energy: f64, forces: DMatrix<f64>, report: SolveReport) -> Self {
        let d = basis.dim();
        Self {
            lattice: basis.lattice().vectors().clone(),
            ecut: basis.ecut(),
            supersampling: basis.supersampling(),
            millers: basis.millers().iter().map(|m| m[..d].to_vec()).collect(),
            coeffs: phi.coeffs().clone(),
            energy,
            forces,
            report,
        }
    }

    /// Rebuilds the basis and checks that it enumerates the stored plane waves.
    pub fn basis(&self) -> pwap_core::Result<PlaneWaveBasis> {
        let basis = PlaneWaveBasis::new(Lattice::new(self.lattice.clone())?, self.ecut, self.supersampling)?;
        let d = basis.dim();
        let same = basis.len() == self.millers.len()
            && basis.millers().iter().zip(&self.millers).all(|(a, b)| a[..d] == b[..]);
        if !same {
            return Err(pwap_core::Error::BasisMismatch(
                "archived plane waves differ from the rebuilt basis".into(),
            ));
        }
        Ok(basis)
    }

    pub fn orbitals(&self) -> pwap_core::Result<OrbitalSet> {
        OrbitalSet::new(self.coeffs.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.lattice.nrows();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for x in self.lattice.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.ecut.to_le_bytes());
        out.extend_from_slice(&(self.supersampling as u32).to_le_bytes());
        out.extend_from_slice(&(self.millers.len() as u64).to_le_bytes());
        for m in &self.millers {
            for k in m {
                out.extend_from_slice(&k.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.coeffs.ncols() as u64).to_le_bytes());
        for z in self.coeffs.iter() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out.extend_from_slice(&self.energy.to_le_bytes());
        out.extend_from_slice(&(self.forces.ncols() as u64).to_le_bytes());
        for x in self.forces.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let r = &self.report;
        out.push(r.converged as u8);
        out.extend_from_slice(&(r.iterations as u64).to_le_bytes());
        out.extend_from_slice(&r.residual_norm.to_le_bytes());
        out.extend_from_slice(&(r.energies.len() as u64).to_le_bytes());
        for e in &r.energies {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err("bad magic".into());
        }
        let d = r.u32()? as usize;
        if !(1..=3).contains(&d) {
            return Err(format!("dimension {d}"));
        }
        let lattice = DMatrix::from_column_slice(d, d, &r.f64s(d * d)?);
        let ecut = r.f64()?;
        let supersampling = r.u32()? as usize;
        let n_b = r.len()?;
        let mut millers = Vec::with_capacity(n_b);
        for _ in 0..n_b {
            millers.push((0..d).map(|_| r.i64()).collect::<Result<Vec<_>, _>>()?);
        }
        let n_el = r.len()?;
        let mut coeffs = CMatrix::zeros(n_b, n_el);
        for z in coeffs.iter_mut() {
            *z = Complex64::new(r.f64()?, r.f64()?);
        }
        let energy = r.f64()?;
        let n_atoms = r.len()?;
        let forces = DMatrix::from_column_slice(d, n_atoms, &r.f64s(d * n_atoms)?);
        let converged = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(format!("convergence flag {b}")),
        };
        let iterations = r.u64()? as usize;
        let residual_norm = r.f64()?;
        let n_e = r.len()?;
        let energies = r.f64s(n_e)?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            lattice,
            ecut,
            supersampling,
            millers,
            coeffs,
            energy,
            forces,
            report: SolveReport {
                converged,
                iterations,
                residual_norm,
                energies,
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| CliError::Archive {
            path: path.to_path_buf(),
            msg,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A count that must fit in what is left of the input.
    fn len(&mut self) -> Result<usize, String> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(format!("implausible length {n}"));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes to a sibling temp file and renames it over `path`, so readers see
/// either the old content or the new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pwap_core::solvers::{scf, ScfOptions};
    use pwap_core::{model, Atom, MeanFieldModel};

    fn sample() -> Archive {
        let m = MeanFieldModel::new(
            Lattice::line(5.0).unwrap(),
            vec![Atom {
                position: vec![0.3],
                depth: -2.0,
                width: 0.5,
            }],
            2,
        )
        .unwrap();
        let b = PlaneWaveBasis::new(m.lattice.clone(), 6.0, 3).unwrap();
        let (phi, rep) = scf(&m, &b, &ScfOptions::default()).unwrap();
        let e = model::energy(&m, &b, &phi).unwrap();
        let f = model::forces(&m, &b, &phi).unwrap();
        Archive::new(&b, &phi, e, f, rep)
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..5], b"PWAP1");
        let back = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        back.basis().unwrap();
        back.orbitals().unwrap();
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = sample().to_bytes();
        for cut in [0, 4, 5, 20, bytes.len() - 1] {
            assert!(Archive::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Archive::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Archive::from_bytes(&bad).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
