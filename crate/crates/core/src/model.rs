//! Mean-field energy `E(P) = Tr(H0 P) + E_nl(P)` with periodized Gaussian
//! atomic wells, an optional Hartree term and the quartic nonlinearity
//! `(alpha/2) int rho^2`.
//!
//! All grid integrals are exact because the FFT grid of a
//! [`PlaneWaveBasis`] resolves products of four basis functions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::basis::{Miller, PlaneWaveBasis};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::orbitals::{CMatrix, OrbitalSet, TangentSet};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Gaussian well `A exp(-|x - X|^2 / (2 sigma^2))`, periodized over the lattice.
/// Attractive wells have `depth < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Fractional coordinates.
    pub position: Vec<f64>,
    pub depth: f64,
    pub width: f64,
}

/// One plane-wave term `c exp(i G.x)` of a fixed external potential.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTerm {
    pub miller: Miller,
    pub coeff: Complex64,
}

impl FourierTerm {
    /// `amplitude * cos(G.x)` split into its two exponentials.
    pub fn cosine(miller: Miller, amplitude: f64) -> [FourierTerm; 2] {
        let neg = [-miller[0], -miller[1], -miller[2]];
        let c = Complex64::new(0.5 * amplitude, 0.0);
        [
            FourierTerm { miller, coeff: c },
            FourierTerm { miller: neg, coeff: c },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldModel {
    pub lattice: Lattice,
    pub atoms: Vec<Atom>,
    pub external: Vec<FourierTerm>,
    /// Strength of the `(alpha/2) int rho^2` term.
    pub alpha: f64,
    pub hartree: bool,
    pub n_el: usize,
    /// Kinetic operator is `-kinetic_prefactor * Laplacian` (1/2 for Kohn-Sham units).
    pub kinetic_prefactor: f64,
}

impl MeanFieldModel {
    pub fn new(lattice: Lattice, atoms: Vec<Atom>, n_el: usize) -> Result<Self> {
        let m = Self {
            lattice,
            atoms,
            external: Vec::new(),
            alpha: 0.0,
            hartree: false,
            n_el,
            kinetic_prefactor: 0.5,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_hartree(mut self, on: bool) -> Self {
        self.hartree = on;
        self
    }

    pub fn with_external(mut self, terms: Vec<FourierTerm>) -> Self {
        self.external = terms;
        self
    }

    pub fn with_kinetic_prefactor(mut self, c: f64) -> Result<Self> {
        self.kinetic_prefactor = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lattice.dim();
        if self.n_el == 0 {
            return Err(Error::InvalidInput("n_el must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.kinetic_prefactor > 0.0) {
            return Err(Error::InvalidInput("kinetic prefactor must be positive".into()));
        }
        for (j, a) in self.atoms.iter().enumerate() {
            if a.position.len() != d {
                return Err(Error::InvalidInput(format!(
                    "atom {j} has {} coordinates, lattice dimension is {d}",
                    a.position.len()
                )));
            }
            if !(a.width > 0.0) || !a.depth.is_finite() || a.position.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {j} has invalid parameters")));
            }
        }
        Ok(())
    }

    pub fn check_basis(&self, basis: &PlaneWaveBasis) -> Result<()> {
        if basis.lattice() != &self.lattice {
            return Err(Error::BasisMismatch("basis built on a different lattice".into()));
        }
        if self.n_el > basis.len() {
            return Err(Error::InvalidInput(format!(
                "n_el = {} exceeds basis size {}",
                self.n_el,
                basis.len()
            )));
        }
        Ok(())
    }

    /// Copy with atom `j` moved by `h` bohr along Cartesian axis `beta`.
    pub fn displaced(&self, j: usize, beta: usize, h: f64) -> Self {
        let mut m = self.clone();
        let mut cart = self.lattice.to_cartesian(&self.atoms[j].position);
        cart[beta] += h;
        m.atoms[j].position = self.lattice.to_fractional(&cart);
        m
    }
}

/// Real function sampled on the FFT grid of a basis, together with its plain
/// Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
    pub fourier: Vec<Complex64>,
}

impl GridField {
    pub fn from_values(basis: &PlaneWaveBasis, values: Vec<f64>) -> Self {
        let fourier = basis.field_fourier(&values);
        Self { values, fourier }
    }

    pub fn from_fourier(basis: &PlaneWaveBasis, fourier: Vec<Complex64>) -> Self {
        let values = basis.field_from_fourier(&fourier);
        Self { values, fourier }
    }

    pub fn zeros(basis: &PlaneWaveBasis) -> Self {
        let n = basis.grid().len();
        Self {
            values: vec![0.0; n],
            fourier: vec![ZERO; n],
        }
    }

    /// `(int_Gamma f(x)^2 dx)^{1/2}`.
    pub fn l2_norm(&self, basis: &PlaneWaveBasis) -> f64 {
        basis.integrate(&self.values.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
    }

    pub fn integral(&self, basis: &PlaneWaveBasis) -> f64 {
        basis.integrate(&self.values)
    }

    pub fn axpy(&self, a: f64, other: &GridField) -> GridField {
        GridField {
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
            fourier: self.fourier.iter().zip(&other.fourier).map(|(x, y)| x + y * a).collect(),
        }
    }
}

pub type Density = GridField;

/// Fourier coefficient at wave vector `g` of atom `j`'s periodized well.
fn atom_coefficient(lattice: &Lattice, atom: &Atom, g: &[f64]) -> Complex64 {
    let d = lattice.dim() as i32;
    let g2: f64 = g.iter().map(|x| x * x).sum();
    let x = lattice.to_cartesian(&atom.position);
    let gx: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
    let amp = atom.depth * (2.0 * PI * atom.width * atom.width).powf(d as f64 / 2.0)
        * (-0.5 * atom.width * atom.width * g2).exp()
        / lattice.volume();
    Complex64::from_polar(amp, -gx)
}

/// Plain Fourier coefficients (on the grid of `basis`) of the single-atom
/// potential of atom `j`, restricted to the frequencies reachable as
/// differences of sphere vectors.
pub fn atom_potential(model: &MeanFieldModel, basis: &PlaneWaveBasis, j: usize) -> Vec<Complex64> {
    let n = basis.grid().len();
    (0..n)
        .map(|idx| {
            if basis.in_density_box(idx) {
                atom_coefficient(&model.lattice, &model.atoms[j], &basis.grid_g_vector(idx))
            } else {
                ZERO
            }
        })
        .collect()
}

/// Local potential: sum of the atomic wells plus the external terms.
pub fn local_potential(model: &MeanFieldModel, basis: &PlaneWaveBasis) -> GridField {
    let n = basis.grid().len();
    let mut fourier = vec![ZERO; n];
    for j in 0..model.atoms.len() {
        for (f, c) in fourier.iter_mut().zip(atom_potential(model, basis, j)) {
            *f += c;
        }
    }
    let d = basis.dim();
    for t in &model.external {
        let idx = basis.grid().index_of_freq(&t.miller[..d]);
        if basis.in_density_box(idx) && basis.grid().freq_of_index(idx)[..d] == t.miller[..d] {
            fourier[idx] += t.coeff;
        }
    }
    GridField::from_fourier(basis, fourier)
}

/// Zero-mean periodic solution of `-Laplace V = 4 pi (rho - mean rho)`.
pub fn hartree_potential(density: &GridField, basis: &PlaneWaveBasis) -> GridField {
    let fourier = density
        .fourier
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let g = basis.grid_g_vector(idx);
            let g2: f64 = g.iter().map(|x| x * x).sum();
            if idx == 0 || g2 == 0.0 {
                ZERO
            } else {
                r * (4.0 * PI / g2)
            }
        })
        .collect();
    GridField::from_fourier(basis, fourier)
}

/// `rho(x) = sum_i |phi_i(x)|^2`.
pub fn density(basis: &PlaneWaveBasis, phi: &CMatrix) -> Density {
    let n = basis.grid().len();
    let mut values = vec![0.0; n];
    for col in phi.column_iter() {
        let g = basis.orbital_to_grid(col);
        for (v, z) in values.iter_mut().zip(&g) {
            *v += z.norm_sqr();
        }
    }
    GridField::from_values(basis, values)
}

/// `rho_X(x) = 2 Re sum_i conj(phi_i(x)) xi_i(x)` for `X = Phi Xi^* + Xi Phi^*`.
pub fn tangent_density(basis: &PlaneWaveBasis, phi: &CMatrix, xi: &CMatrix) -> Density {
    let n = basis.grid().len();
    let mut values = vec![0.0; n];
    for (p, x) in phi.column_iter().zip(xi.column_iter()) {
        let gp = basis.orbital_to_grid(p);
        let gx = basis.orbital_to_grid(x);
        for ((v, a), b) in values.iter_mut().zip(&gp).zip(&gx) {
            *v += 2.0 * (a.conj() * b).re;
        }
    }
    GridField::from_values(basis, values)
}

/// Multiplication by a real grid potential followed by projection onto the sphere.
pub fn apply_potential(basis: &PlaneWaveBasis, potential: &[f64], psi: &CMatrix) -> CMatrix {
    let n = basis.grid().len() as f64;
    let mut out = CMatrix::zeros(psi.nrows(), psi.ncols());
    for (k, col) in psi.column_iter().enumerate() {
        let mut data = basis.scatter(col);
        basis.grid().inverse(&mut data);
        for (z, v) in data.iter_mut().zip(potential) {
            *z *= *v / n;
        }
        basis.grid().forward(&mut data);
        out.set_column(k, &basis.gather(&data));
    }
    out
}

/// Mean-field Hamiltonian `-c Laplace + V_loc [+ V_H(rho)] + alpha rho` for a fixed density.
#[derive(Debug, Clone)]
pub struct Hamiltonian<'a> {
    basis: &'a PlaneWaveBasis,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
}

impl<'a> Hamiltonian<'a> {
    /// Hamiltonian at density `rho` (`None` gives the core Hamiltonian `H0`).
    pub fn new(model: &MeanFieldModel, basis: &'a PlaneWaveBasis, rho: Option<&Density>) -> Result<Self> {
        model.check_basis(basis)?;
        let mut potential = local_potential(model, basis).values;
        if let Some(rho) = rho {
            if model.hartree {
                let vh = hartree_potential(rho, basis);
                potential.iter_mut().zip(&vh.values).for_each(|(v, h)| *v += h);
            }
            if model.alpha != 0.0 {
                potential
                    .iter_mut()
                    .zip(&rho.values)
                    .for_each(|(v, r)| *v += model.alpha * r);
            }
        }
        Ok(Self::from_potential(model, basis, potential))
    }

    pub fn from_potential(model: &MeanFieldModel, basis: &'a PlaneWaveBasis, potential: Vec<f64>) -> Self {
        let kinetic = basis.g2_all().iter().map(|g2| model.kinetic_prefactor * g2).collect();
        Self {
            basis,
            kinetic,
            potential,
        }
    }

    /// Hamiltonian at the density of `phi`.
    pub fn at(model: &MeanFieldModel, basis: &'a PlaneWaveBasis, phi: &CMatrix) -> Result<Self> {
        basis.check_len(phi.nrows())?;
        let rho = density(basis, phi);
        Self::new(model, basis, Some(&rho))
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        self.basis
    }

    /// Diagonal kinetic entries `c |G|^2`.
    pub fn kinetic(&self) -> &[f64] {
        &self.kinetic
    }

    /// Total local potential on the grid.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn apply(&self, psi: &CMatrix) -> CMatrix {
        let mut out = apply_potential(self.basis, &self.potential, psi);
        for (i, t) in self.kinetic.iter().enumerate() {
            for k in 0..psi.ncols() {
                out[(i, k)] += psi[(i, k)] * *t;
            }
        }
        out
    }
}

/// `H(P) psi` with `P` given by orthonormal orbitals.
pub fn apply_hamiltonian(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    psi: &CMatrix,
) -> Result<CMatrix> {
    basis.check_len(psi.nrows())?;
    Ok(Hamiltonian::at(model, basis, phi.coeffs())?.apply(psi))
}

/// Total energy `E(P)`.
pub fn energy(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet) -> Result<f64> {
    model.check_basis(basis)?;
    basis.check_len(phi.n_basis())?;
    let c = phi.coeffs();
    let kinetic: f64 = (0..c.nrows())
        .map(|i| model.kinetic_prefactor * basis.g2(i) * c.row(i).norm_squared())
        .sum();
    let rho = density(basis, c);
    let vloc = local_potential(model, basis);
    let mut integrand: Vec<f64> = vloc.values.iter().zip(&rho.values).map(|(v, r)| v * r).collect();
    if model.hartree {
        let vh = hartree_potential(&rho, basis);
        integrand
            .iter_mut()
            .zip(vh.values.iter().zip(&rho.values))
            .for_each(|(f, (v, r))| *f += 0.5 * v * r);
    }
    if model.alpha != 0.0 {
        integrand
            .iter_mut()
            .zip(&rho.values)
            .for_each(|(f, r)| *f += 0.5 * model.alpha * r * r);
    }
    Ok(kinetic + basis.integrate(&integrand))
}

/// `F_{j,beta} = -int (d V_loc / d X_{j,beta}) rho` for a given (possibly
/// non-physical) density; linear in `rho`.
pub fn forces_from_density(model: &MeanFieldModel, basis: &PlaneWaveBasis, rho: &Density) -> DMatrix<f64> {
    let d = basis.dim();
    let vol = model.lattice.volume();
    let mut out = DMatrix::zeros(d, model.atoms.len());
    let gvecs: Vec<Vec<f64>> = (0..basis.grid().len()).map(|i| basis.grid_g_vector(i)).collect();
    for j in 0..model.atoms.len() {
        let vj = atom_potential(model, basis, j);
        for beta in 0..d {
            // dV/dX_{j,beta} has coefficients -i G_beta v_j(G)
            let s: f64 = vj
                .iter()
                .zip(&rho.fourier)
                .zip(&gvecs)
                .map(|((v, r), g)| (Complex64::new(0.0, -g[beta]) * v).conj() * r)
                .map(|z| z.re)
                .sum();
            out[(beta, j)] = -vol * s;
        }
    }
    out
}

/// Hellmann-Feynman forces (hartree/bohr), shape `d x N_at`.
pub fn forces(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &OrbitalSet) -> Result<DMatrix<f64>> {
    model.check_basis(basis)?;
    basis.check_len(phi.n_basis())?;
    let rho = density(basis, phi.coeffs());
    Ok(forces_from_density(model, basis, &rho))
}

/// Directional derivative `dF(P) . X = -Tr(dV/dX_j X)`; exact since `F` is linear in `P`.
pub fn force_derivative(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &OrbitalSet,
    xi: &TangentSet,
) -> Result<DMatrix<f64>> {
    basis.check_len(phi.n_basis())?;
    xi.check_gauge(phi, 1e-8)?;
    let rho_x = tangent_density(basis, phi.coeffs(), xi.coeffs());
    Ok(forces_from_density(model, basis, &rho_x))
}

/// Orbitals for `dV_loc/dX_{j,beta} Phi`, used by the operator-norm force bound.
pub fn apply_force_operator(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    j: usize,
    beta: usize,
    psi: &CMatrix,
) -> CMatrix {
    let vj = atom_potential(model, basis, j);
    let dv: Vec<Complex64> = vj
        .iter()
        .enumerate()
        .map(|(idx, v)| Complex64::new(0.0, -basis.grid_g_vector(idx)[beta]) * v)
        .collect();
    let values = basis.field_from_fourier(&dv);
    apply_potential(basis, &values, psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(a: f64) -> Lattice {
        Lattice::line(a).unwrap()
    }

    fn e0(basis: &PlaneWaveBasis) -> OrbitalSet {
        let mut c = CMatrix::zeros(basis.len(), 1);
        c[(0, 0)] = Complex64::new(1.0, 0.0);
        OrbitalSet::new(c).unwrap()
    }

    #[test]
    fn gaussian_zero_mode() {
        let lat = line(7.0);
        let atom = Atom {
            position: vec![0.0],
            depth: -1.0,
            width: 1.0,
        };
        let model = MeanFieldModel::new(lat, vec![atom], 1).unwrap();
        let basis = PlaneWaveBasis::new(model.lattice.clone(), 3.0, 3).unwrap();
        let v = local_potential(&model, &basis);
        assert!((v.fourier[0].re + (2.0 * PI).sqrt() / 7.0).abs() < 1e-14);
    }

    #[test]
    fn constant_density_gp_energy() {
        let model = MeanFieldModel::new(line(2.0 * PI), vec![], 1).unwrap().with_alpha(1.0).unwrap();
        let basis = PlaneWaveBasis::new(model.lattice.clone(), 2.0, 3).unwrap();
        let e = energy(&model, &basis, &e0(&basis)).unwrap();
        assert!((e - 1.0 / (4.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn free_electron_plane_wave() {
        let model = MeanFieldModel::new(line(2.0 * PI), vec![], 1).unwrap();
        let basis = PlaneWaveBasis::new(model.lattice.clone(), 4.5, 3).unwrap();
        let i = basis.index_of(&[3, 0, 0]).unwrap();
        let mut psi = CMatrix::zeros(basis.len(), 1);
        psi[(i, 0)] = Complex64::new(1.0, 0.0);
        let hpsi = apply_hamiltonian(&model, &basis, &e0(&basis), &psi).unwrap();
        let expect = &psi * Complex64::new(4.5, 0.0);
        assert!((hpsi - expect).norm() < 1e-13);
    }

    #[test]
    fn hartree_of_cosine() {
        let basis = PlaneWaveBasis::new(line(2.0 * PI), 2.0, 3).unwrap();
        let vals: Vec<f64> = (0..basis.grid().len())
            .map(|r| (2.0 * PI * basis.grid().point_of_index(r)[0]).cos())
            .collect();
        let rho = GridField::from_values(&basis, vals.clone());
        let vh = hartree_potential(&rho, &basis);
        for (v, c) in vh.values.iter().zip(&vals) {
            assert!((v - 4.0 * PI * c).abs() < 1e-12);
        }
        let flat = GridField::from_values(&basis, vec![0.3; basis.grid().len()]);
        assert!(hartree_potential(&flat, &basis).values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(MeanFieldModel::new(line(1.0), vec![], 0).is_err());
        let bad = Atom {
            position: vec![0.0],
            depth: -1.0,
            width: 0.0,
        };
        assert!(MeanFieldModel::new(line(1.0), vec![bad], 1).is_err());
        assert!(MeanFieldModel::new(line(1.0), vec![], 1).unwrap().with_alpha(-1.0).is_err());
    }

    #[test]
    fn force_derivative_of_zero_is_zero() {
        let atom = Atom {
            position: vec![0.1],
            depth: -2.0,
            width: 0.6,
        };
        let model = MeanFieldModel::new(line(6.0), vec![atom], 1).unwrap();
        let basis = PlaneWaveBasis::new(model.lattice.clone(), 3.0, 3).unwrap();
        let phi = e0(&basis);
        let df = force_derivative(&model, &basis, &phi, &TangentSet::zeros(basis.len(), 1)).unwrap();
        assert_eq!(df.norm(), 0.0);
        let err = force_derivative(&model, &basis, &phi, &TangentSet::from_raw(phi.coeffs().clone()));
        assert!(matches!(err, Err(Error::GaugeViolation(_))));
    }
}
