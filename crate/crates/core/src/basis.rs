//! Plane-wave discretization: the sphere `|G|^2/2 <= E_cut`, the FFT grid it
//! embeds into, and transforms between coefficient and real-space pictures.
//!
//! Orbitals are expanded as `psi = sum_G c_G e_G` with the L2-normalized
//! modes `e_G(x) = exp(i G.x) / sqrt(|Gamma|)`. Real functions living on the
//! grid (densities, potentials) use the plain Fourier series convention
//! `f(x) = sum_k f_k exp(i k.x)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{next_smooth, FftGrid};
use crate::lattice::Lattice;

pub type Miller = [i64; 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Coefficients of a function on the plane-wave sphere of some basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierField {
    pub coeffs: DVector<Complex64>,
}

impl FourierField {
    pub fn new(coeffs: DVector<Complex64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Values of a (complex) function at the real-space grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct PlaneWaveBasis {
    lattice: Lattice,
    ecut: f64,
    supersampling: usize,
    millers: Vec<Miller>,
    gvecs: Vec<[f64; 3]>,
    g2: Vec<f64>,
    grid: Arc<FftGrid>,
    grid_index: Vec<usize>,
    lookup: HashMap<Miller, usize>,
}

impl PartialEq for PlaneWaveBasis {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice
            && self.ecut == other.ecut
            && self.millers == other.millers
            && *self.grid == *other.grid
    }
}

impl PlaneWaveBasis {
    /// Enumerates `{G in R* : |G|^2/2 <= ecut}`, ordered by nondecreasing `|G|`
    /// with ties broken lexicographically on the integer coordinates.
    ///
    /// The FFT grid along each axis is the smallest {2,3,5}-smooth size
    /// strictly larger than `(s + 1) * m_max`, so integrals of products of up
    /// to `s + 1` basis functions are exact.
    pub fn new(lattice: Lattice, ecut: f64, supersampling: usize) -> Result<Self> {
        if !(ecut > 0.0) || !ecut.is_finite() {
            return Err(Error::InvalidInput(format!("cutoff must be positive, got {ecut}")));
        }
        if supersampling < 2 {
            return Err(Error::InvalidInput(format!(
                "supersampling factor must be at least 2, got {supersampling}"
            )));
        }
        let d = lattice.dim();
        let gmax = (2.0 * ecut).sqrt();
        let bounds: Vec<i64> = (0..d)
            .map(|k| {
                let a = lattice.vectors().column(k).norm();
                (gmax * a / (2.0 * std::f64::consts::PI)).ceil() as i64 + 1
            })
            .collect();

        let mut entries: Vec<(f64, Miller, [f64; 3])> = Vec::new();
        let mut m = [0i64; 3];
        enumerate_box(&bounds, 0, &mut m, &mut |mm| {
            let g = lattice.g_vector(&mm[..d]);
            let g2: f64 = g.iter().map(|x| x * x).sum();
            if 0.5 * g2 <= ecut {
                let mut gv = [0.0; 3];
                gv[..d].copy_from_slice(&g);
                entries.push((g2, *mm, gv));
            }
        });
        // quantized norm keeps the order transitive when symmetric vectors
        // differ in the last bits
        let key = |g2: f64| (g2 * 1e10).round() as i128;
        entries.sort_by(|a, b| key(a.0).cmp(&key(b.0)).then(a.1.cmp(&b.1)));

        let mut extent = [0i64; 3];
        for (_, mm, _) in &entries {
            for k in 0..d {
                extent[k] = extent[k].max(mm[k].abs());
            }
        }
        let sizes: Vec<usize> = (0..d)
            .map(|k| next_smooth((supersampling as i64 + 1) as usize * extent[k] as usize + 1))
            .collect();
        let grid = Arc::new(FftGrid::new(&sizes));

        let millers: Vec<Miller> = entries.iter().map(|e| e.1).collect();
        let grid_index = millers.iter().map(|mm| grid.index_of_freq(&mm[..d])).collect();
        let lookup = millers.iter().enumerate().map(|(i, mm)| (*mm, i)).collect();
        Ok(Self {
            lattice,
            ecut,
            supersampling,
            gvecs: entries.iter().map(|e| e.2).collect(),
            g2: entries.iter().map(|e| e.0).collect(),
            millers,
            grid,
            grid_index,
            lookup,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn ecut(&self) -> f64 {
        self.ecut
    }

    pub fn supersampling(&self) -> usize {
        self.supersampling
    }

    /// Number of plane waves `N_b`.
    pub fn len(&self) -> usize {
        self.millers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.millers.is_empty()
    }

    pub fn millers(&self) -> &[Miller] {
        &self.millers
    }

    pub fn g_vector(&self, i: usize) -> &[f64] {
        &self.gvecs[i][..self.dim()]
    }

    /// `|G_i|^2`.
    pub fn g2(&self, i: usize) -> f64 {
        self.g2[i]
    }

    pub fn g2_all(&self) -> &[f64] {
        &self.g2
    }

    pub fn index_of(&self, m: &Miller) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    pub fn grid(&self) -> &FftGrid {
        &self.grid
    }

    /// Cartesian wave vector of a grid frequency slot.
    pub fn grid_g_vector(&self, idx: usize) -> Vec<f64> {
        let f = self.grid.freq_of_index(idx);
        self.lattice.g_vector(&f[..self.dim()])
    }

    /// Whether the grid slot lies in the box of frequencies `|k_a| <= 2 m_a`
    /// reachable as a difference of two sphere vectors.
    pub fn in_density_box(&self, idx: usize) -> bool {
        let f = self.grid.freq_of_index(idx);
        (0..self.dim()).all(|a| {
            let m = self.max_index(a);
            f[a].abs() <= 2 * m
        })
    }

    /// Largest |integer coordinate| of the sphere along axis `a`.
    pub fn max_index(&self, a: usize) -> i64 {
        self.millers.iter().map(|m| m[a].abs()).max().unwrap_or(0)
    }

    /// Whether every vector of this basis belongs to `other`.
    pub fn is_subset_of(&self, other: &PlaneWaveBasis) -> bool {
        self.lattice == other.lattice && self.millers.iter().all(|m| other.index_of(m).is_some())
    }

    /// Places sphere coefficients into a zeroed grid-sized Fourier array.
    pub fn scatter(&self, coeffs: DVectorView<Complex64>) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.grid.len()];
        for (c, &gi) in coeffs.iter().zip(&self.grid_index) {
            out[gi] = *c;
        }
        out
    }

    /// Reads sphere coefficients out of a grid-sized Fourier array.
    pub fn gather(&self, data: &[Complex64]) -> DVector<Complex64> {
        DVector::from_iterator(self.len(), self.grid_index.iter().map(|&gi| data[gi]))
    }

    /// Orbital coefficients -> values on the real-space grid.
    pub fn orbital_to_grid(&self, coeffs: DVectorView<Complex64>) -> Vec<Complex64> {
        let mut data = self.scatter(coeffs);
        self.grid.inverse(&mut data);
        let s = 1.0 / self.lattice.volume().sqrt();
        data.iter_mut().for_each(|v| *v *= s);
        data
    }

    /// Real-space values -> orbital coefficients (L2 projection onto the sphere).
    pub fn grid_to_orbital(&self, mut values: Vec<Complex64>) -> DVector<Complex64> {
        self.grid.forward(&mut values);
        let s = self.lattice.volume().sqrt() / self.grid.len() as f64;
        self.gather(&values) * Complex64::new(s, 0.0)
    }

    /// Plain Fourier coefficients of a real grid function.
    pub fn field_fourier(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.grid.forward(&mut data);
        let s = 1.0 / self.grid.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
        data
    }

    /// Real grid function from plain Fourier coefficients (imaginary part dropped).
    pub fn field_from_fourier(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.grid.inverse(&mut data);
        data.iter().map(|v| v.re).collect()
    }

    /// Integral over the cell of a grid function (exact for band-limited products).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.lattice.volume() / self.grid.len() as f64 * values.iter().sum::<f64>()
    }

    pub fn to_real(&self, field: &FourierField) -> Result<RealField> {
        self.check_len(field.len())?;
        Ok(RealField {
            values: self.orbital_to_grid(field.coeffs.as_view()),
        })
    }

    pub fn to_fourier(&self, field: &RealField) -> Result<FourierField> {
        if field.values.len() != self.grid.len() {
            return Err(Error::BasisMismatch(format!(
                "real field has {} points, grid has {}",
                field.values.len(),
                self.grid.len()
            )));
        }
        Ok(FourierField::new(self.grid_to_orbital(field.values.clone())))
    }

    /// Copies coefficients of a coarser basis into this one (zero padding).
    pub fn lift(&self, coarse: &PlaneWaveBasis, m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        coarse.check_len(m.nrows())?;
        let mut out = DMatrix::zeros(self.len(), m.ncols());
        for (i, mm) in coarse.millers.iter().enumerate() {
            let j = self.index_of(mm).ok_or_else(|| {
                Error::BasisMismatch(format!("plane wave {:?} missing from target basis", mm))
            })?;
            out.row_mut(j).copy_from(&m.row(i));
        }
        Ok(out)
    }

    /// Restricts coefficients to a smaller basis (drops modes outside it).
    pub fn restrict(&self, target: &PlaneWaveBasis, m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        self.check_len(m.nrows())?;
        let mut out = DMatrix::zeros(target.len(), m.ncols());
        for (i, mm) in target.millers.iter().enumerate() {
            if let Some(j) = self.index_of(mm) {
                out.row_mut(i).copy_from(&m.row(j));
            }
        }
        Ok(out)
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::BasisMismatch(format!(
                "expected {} coefficients, got {}",
                self.len(),
                n
            )));
        }
        Ok(())
    }
}

fn enumerate_box(bounds: &[i64], axis: usize, m: &mut Miller, f: &mut impl FnMut(&Miller)) {
    if axis == bounds.len() {
        f(m);
        return;
    }
    for v in -bounds[axis]..=bounds[axis] {
        m[axis] = v;
        enumerate_box(bounds, axis + 1, m, f);
    }
    m[axis] = 0;
}

/// `(sum_G (1 + |G|^2)^s |c_G|^2)^{1/2}`.
pub fn sobolev_norm(basis: &PlaneWaveBasis, field: &FourierField, s_exp: f64) -> Result<f64> {
    basis.check_len(field.len())?;
    Ok(field
        .coeffs
        .iter()
        .zip(basis.g2_all())
        .map(|(c, g2)| (1.0 + g2).powf(s_exp) * c.norm_sqr())
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line() -> Lattice {
        Lattice::line(2.0 * PI).unwrap()
    }

    #[test]
    fn tiny_spheres() {
        let b = PlaneWaveBasis::new(line(), 0.5, 3).unwrap();
        assert_eq!(b.millers(), &[[0, 0, 0], [-1, 0, 0], [1, 0, 0]]);
        let b = PlaneWaveBasis::new(line(), 0.49, 3).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PlaneWaveBasis::new(line(), 0.0, 3).is_err());
        assert!(PlaneWaveBasis::new(line(), -1.0, 3).is_err());
        assert!(PlaneWaveBasis::new(line(), 1.0, 1).is_err());
    }

    #[test]
    fn grid_is_alias_free() {
        let b = PlaneWaveBasis::new(line(), 8.0, 3).unwrap();
        // |G| <= 4 -> m_max = 4, need more than 16 points
        assert_eq!(b.max_index(0), 4);
        assert!(b.grid().sizes()[0] > 16);
    }

    #[test]
    fn constant_mode_is_flat() {
        let b = PlaneWaveBasis::new(line(), 2.0, 3).unwrap();
        let mut c = FourierField::zeros(b.len());
        c.coeffs[0] = Complex64::new(1.0, 0.0);
        let r = b.to_real(&c).unwrap();
        let expect = 1.0 / (2.0 * PI).sqrt();
        assert!(r.values.iter().all(|v| (v - expect).norm() < 1e-14));
    }

    #[test]
    fn sobolev_examples() {
        let b = PlaneWaveBasis::new(line(), 0.5, 3).unwrap();
        let mut c = FourierField::zeros(b.len());
        c.coeffs[0] = Complex64::new(1.0, 0.0);
        assert!((sobolev_norm(&b, &c, 3.7).unwrap() - 1.0).abs() < 1e-15);
        let i = b.index_of(&[1, 0, 0]).unwrap();
        let mut c = FourierField::zeros(b.len());
        c.coeffs[i] = Complex64::new(1.0, 0.0);
        assert!((sobolev_norm(&b, &c, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let b = PlaneWaveBasis::new(line(), 2.0, 3).unwrap();
        assert!(b.to_real(&FourierField::zeros(b.len() + 1)).is_err());
        let bad = RealField { values: vec![ZERO; 3] };
        assert!(b.to_fourier(&bad).is_err());
    }
}
