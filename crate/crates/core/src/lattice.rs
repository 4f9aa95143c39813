//! Bravais lattices in one, two or three dimensions.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A periodic cell. Columns of `vectors` are the cell vectors `a_k` (bohr),
/// columns of `reciprocal` the reciprocal vectors `b_k` with `b_k . a_l = 2 pi delta_kl`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    vectors: DMatrix<f64>,
    reciprocal: DMatrix<f64>,
    volume: f64,
}

impl Lattice {
    /// Builds a lattice from a square matrix whose columns are the cell vectors.
    pub fn new(vectors: DMatrix<f64>) -> Result<Self> {
        let d = vectors.nrows();
        if d == 0 || d > 3 || vectors.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "lattice must be a square matrix of dimension 1, 2 or 3 (got {}x{})",
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("lattice vectors must be finite".into()));
        }
        let det = vectors.determinant();
        let scale: f64 = vectors
            .column_iter()
            .map(|c| c.norm())
            .product::<f64>()
            .max(f64::MIN_POSITIVE);
        if det.abs() <= 1e-12 * scale {
            return Err(Error::DegenerateLattice { volume: det.abs() });
        }
        let inv = vectors
            .clone()
            .try_inverse()
            .ok_or(Error::DegenerateLattice { volume: det.abs() })?;
        let reciprocal = inv.transpose() * (2.0 * PI);
        Ok(Self {
            vectors,
            reciprocal,
            volume: det.abs(),
        })
    }

    /// One-dimensional cell `[0, a)`.
    pub fn line(a: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a))
    }

    /// Simple cubic cell with edge `a`.
    pub fn cubic(a: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(3, 3, a))
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn reciprocal(&self) -> &DMatrix<f64> {
        &self.reciprocal
    }

    /// Cell volume |Gamma| (length in 1D, area in 2D).
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Cartesian reciprocal vector for integer coordinates `m`.
    pub fn g_vector(&self, m: &[i64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| (0..d).map(|k| self.reciprocal[(r, k)] * m[k] as f64).sum())
            .collect()
    }

    /// Converts fractional coordinates to Cartesian ones.
    pub fn to_cartesian(&self, frac: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| (0..d).map(|k| self.vectors[(r, k)] * frac[k]).sum())
            .collect()
    }

    /// Converts Cartesian coordinates to fractional ones.
    pub fn to_fractional(&self, cart: &[f64]) -> Vec<f64> {
        let d = self.dim();
        // a_k . b_l = 2 pi delta, so frac_l = b_l . x / (2 pi)
        (0..d)
            .map(|l| (0..d).map(|r| self.reciprocal[(r, l)] * cart[r]).sum::<f64>() / (2.0 * PI))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reciprocal_duality() {
        let v = DMatrix::from_row_slice(3, 3, &[0.0, 5.13, 5.13, 5.13, 0.0, 5.13, 5.13, 5.13, 0.0]);
        let lat = Lattice::new(v.clone()).unwrap();
        let prod = lat.reciprocal().transpose() * v;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 * PI } else { 0.0 };
                assert_relative_eq!(prod[(i, j)], expect, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(lat.volume(), 2.0 * 5.13f64.powi(3), epsilon = 1e-10);
    }

    #[test]
    fn rejects_degenerate() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(Lattice::new(v), Err(Error::DegenerateLattice { .. })));
        assert!(Lattice::line(0.0).is_err());
    }

    #[test]
    fn fractional_round_trip() {
        let v = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.0, 2.0]);
        let lat = Lattice::new(v).unwrap();
        let x = lat.to_cartesian(&[0.25, -0.4]);
        let f = lat.to_fractional(&x);
        assert_relative_eq!(f[0], 0.25, epsilon = 1e-14);
        assert_relative_eq!(f[1], -0.4, epsilon = 1e-14);
    }
}
