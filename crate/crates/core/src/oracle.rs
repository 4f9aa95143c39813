//! Dense density-matrix reference implementations for small bases. Every
//! operator is assembled from analytic Fourier coefficients and explicit
//! commutators, without FFTs, so the production orbital-space code can be
//! checked against an independent path.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::{Miller, PlaneWaveBasis};
use crate::model::MeanFieldModel;
use crate::orbitals::{CMatrix, OrbitalSet};

type Coeffs = HashMap<Miller, Complex64>;

fn sub(a: &Miller, b: &Miller) -> Miller {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Plain Fourier coefficients `f_k` of the density of a (not necessarily
/// projector) matrix `X`: `rho_X(x) = sum_{G,G'} X_{GG'} e_G(x) conj(e_G'(x))`.
pub fn density_coefficients(basis: &PlaneWaveBasis, x: &CMatrix) -> Coeffs {
    let vol = basis.lattice().volume();
    let m = basis.millers();
    let mut out = Coeffs::new();
    for (a, ma) in m.iter().enumerate() {
        for (b, mb) in m.iter().enumerate() {
            *out.entry(sub(ma, mb)).or_insert(Complex64::new(0.0, 0.0)) += x[(a, b)] / vol;
        }
    }
    out
}

/// Matrix of multiplication by `f = sum_k f_k exp(i k.x)`: entries `f_{G - G'}`.
pub fn multiplication_matrix(basis: &PlaneWaveBasis, f: &Coeffs) -> CMatrix {
    let m = basis.millers();
    CMatrix::from_fn(m.len(), m.len(), |a, b| {
        f.get(&sub(&m[a], &m[b])).copied().unwrap_or(Complex64::new(0.0, 0.0))
    })
}

fn g2_of(basis: &PlaneWaveBasis, k: &Miller) -> f64 {
    let g = basis.lattice().g_vector(&k[..basis.dim()]);
    g.iter().map(|x| x * x).sum()
}

/// Coefficients of the local (atoms + external) potential on all differences of sphere vectors.
pub fn local_coefficients(model: &MeanFieldModel, basis: &PlaneWaveBasis) -> Coeffs {
    let d = basis.dim();
    let vol = basis.lattice().volume();
    let mut out = Coeffs::new();
    for ma in basis.millers() {
        for mb in basis.millers() {
            let k = sub(ma, mb);
            if out.contains_key(&k) {
                continue;
            }
            let g = basis.lattice().g_vector(&k[..d]);
            let g2: f64 = g.iter().map(|x| x * x).sum();
            let mut v = Complex64::new(0.0, 0.0);
            for atom in &model.atoms {
                let x = basis.lattice().to_cartesian(&atom.position);
                let gx: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
                let amp = atom.depth * (2.0 * PI * atom.width.powi(2)).powf(d as f64 / 2.0)
                    * (-0.5 * atom.width.powi(2) * g2).exp()
                    / vol;
                v += Complex64::from_polar(amp, -gx);
            }
            for t in &model.external {
                if t.miller[..d] == k[..d] {
                    v += t.coeff;
                }
            }
            out.insert(k, v);
        }
    }
    out
}

/// Nonlinear potential `[V_H(rho)] + alpha rho` for density coefficients `rho`.
pub fn response_coefficients(model: &MeanFieldModel, basis: &PlaneWaveBasis, rho: &Coeffs) -> Coeffs {
    rho.iter()
        .map(|(k, r)| {
            let mut v = r * model.alpha;
            let g2 = g2_of(basis, k);
            if model.hartree && g2 > 0.0 {
                v += r * (4.0 * PI / g2);
            }
            (*k, v)
        })
        .collect()
}

pub fn kinetic_matrix(model: &MeanFieldModel, basis: &PlaneWaveBasis) -> CMatrix {
    let diag = DVector::from_iterator(
        basis.len(),
        basis.g2_all().iter().map(|g| Complex64::new(model.kinetic_prefactor * g, 0.0)),
    );
    CMatrix::from_diagonal(&diag)
}

/// Dense `H(P)`.
pub fn hamiltonian(model: &MeanFieldModel, basis: &PlaneWaveBasis, p: &CMatrix) -> CMatrix {
    let rho = density_coefficients(basis, p);
    let mut h = kinetic_matrix(model, basis) + multiplication_matrix(basis, &local_coefficients(model, basis));
    h += multiplication_matrix(basis, &response_coefficients(model, basis, &rho));
    h
}

/// Dense `E(P) = Tr(H0 P) + 1/2 int rho V_H + alpha/2 int rho^2`.
pub fn energy(model: &MeanFieldModel, basis: &PlaneWaveBasis, p: &CMatrix) -> f64 {
    let h0 = kinetic_matrix(model, basis) + multiplication_matrix(basis, &local_coefficients(model, basis));
    let vol = basis.lattice().volume();
    let rho = density_coefficients(basis, p);
    let mut e = (h0 * p).trace().re;
    for (k, r) in &rho {
        let g2 = g2_of(basis, k);
        e += 0.5 * model.alpha * vol * r.norm_sqr();
        if model.hartree && g2 > 0.0 {
            e += 0.5 * vol * 4.0 * PI / g2 * r.norm_sqr();
        }
    }
    e
}

pub fn projector(phi: &CMatrix) -> CMatrix {
    phi * phi.adjoint()
}

fn comm(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

fn complement(p: &CMatrix) -> CMatrix {
    CMatrix::identity(p.nrows(), p.ncols()) - p
}

/// `Pi_P(X) = P X P_perp + P_perp X P`.
pub fn tangent_projection(p: &CMatrix, x: &CMatrix) -> CMatrix {
    let q = complement(p);
    p * x * &q + &q * x * p
}

/// `R(P) = [P, [P, H(P)]]`.
pub fn residual(model: &MeanFieldModel, basis: &PlaneWaveBasis, p: &CMatrix) -> CMatrix {
    let h = hamiltonian(model, basis, p);
    comm(p, &comm(p, &h))
}

/// `Omega(P) X = -[P, [H(P), X]]`.
pub fn omega(model: &MeanFieldModel, basis: &PlaneWaveBasis, p: &CMatrix, x: &CMatrix) -> CMatrix {
    let h = hamiltonian(model, basis, p);
    -comm(p, &comm(&h, x))
}

/// `K(P) X = Pi_P(dH(P) . X)`.
pub fn k(model: &MeanFieldModel, basis: &PlaneWaveBasis, p: &CMatrix, x: &CMatrix) -> CMatrix {
    let rho = density_coefficients(basis, x);
    let dh = multiplication_matrix(basis, &response_coefficients(model, basis, &rho));
    tangent_projection(p, &dh)
}

/// `X = Phi Xi^* + Xi Phi^*`.
pub fn tangent_matrix(phi: &CMatrix, xi: &CMatrix) -> CMatrix {
    phi * xi.adjoint() + xi * phi.adjoint()
}

/// Orbital form `P_perp X Phi` of a tangent matrix.
pub fn orbital_form(phi: &CMatrix, x: &CMatrix) -> CMatrix {
    complement(&projector(phi)) * x * phi
}

/// Dense `M_i = P_perp T_i^{1/2} P_perp T_i^{1/2} P_perp` for each shift.
pub fn metric_blocks(kinetic: &[f64], p: &CMatrix, shifts: &[f64]) -> Vec<CMatrix> {
    let q = complement(p);
    shifts
        .iter()
        .map(|t| {
            let half = CMatrix::from_diagonal(&DVector::from_iterator(
                kinetic.len(),
                kinetic.iter().map(|k| Complex64::new((k + t).sqrt(), 0.0)),
            ));
            &q * &half * &q * &half * &q
        })
        .collect()
}

/// Orthonormal real basis (columns) of the tangent space `{Xi : Phi^* Xi = 0}`
/// in the embedding `Xi -> (Re vec Xi, Im vec Xi)`.
pub fn tangent_basis(phi: &CMatrix) -> DMatrix<f64> {
    let (n, m) = phi.shape();
    let q = complement(&projector(phi));
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..m {
        for i in 0..n {
            for unit in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut x = CMatrix::zeros(n, m);
                x[(i, j)] = unit;
                let mut v = embed(&(&q * x));
                for c in &cols {
                    let d = c.dot(&v);
                    v -= c * d;
                }
                for c in &cols {
                    let d = c.dot(&v);
                    v -= c * d;
                }
                let nv = v.norm();
                if nv > 1e-8 {
                    cols.push(v / nv);
                }
            }
        }
    }
    DMatrix::from_columns(&cols)
}

pub fn embed(x: &CMatrix) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(2 * n, |i, _| if i < n { x[i].re } else { x[i - n].im })
}

pub fn unembed(v: &DVector<f64>, rows: usize, cols: usize) -> CMatrix {
    let n = rows * cols;
    CMatrix::from_fn(rows, cols, |i, j| Complex64::new(v[i + j * rows], v[i + j * rows + n]))
}

/// Real matrix of an R-linear orbital-space operator restricted to the tangent space.
pub fn assemble_tangent_operator(phi: &CMatrix, mut op: impl FnMut(&CMatrix) -> CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = phi.shape();
    let q = tangent_basis(phi);
    let cols: Vec<DVector<f64>> = q
        .column_iter()
        .map(|c| q.transpose() * embed(&op(&unembed(&c.into_owned(), n, m))))
        .collect();
    (DMatrix::from_columns(&cols), q)
}

/// Orbital form of `(Omega + K) X` evaluated through dense density matrices.
pub fn omega_plus_k_orbital(model: &MeanFieldModel, basis: &PlaneWaveBasis, phi: &CMatrix, xi: &CMatrix) -> CMatrix {
    let p = projector(phi);
    let x = tangent_matrix(phi, xi);
    orbital_form(phi, &(omega(model, basis, &p, &x) + k(model, basis, &p, &x)))
}

/// Dense solve of `(Omega + K) Xi = rhs` on the tangent space, restricted to
/// rows flagged in `mask` when given.
pub fn solve_omega_plus_k(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    phi: &CMatrix,
    rhs: &CMatrix,
    mask: Option<&[bool]>,
) -> CMatrix {
    let (n, m) = phi.shape();
    let restrict = |x: &CMatrix| {
        let mut y = x.clone();
        if let Some(mask) = mask {
            for (i, keep) in mask.iter().enumerate() {
                if !keep {
                    y.row_mut(i).fill(Complex64::new(0.0, 0.0));
                }
            }
        }
        y
    };
    let mut q = tangent_basis(phi);
    if mask.is_some() {
        // basis of the masked tangent space
        let cols: Vec<DVector<f64>> = q.column_iter().map(|c| embed(&restrict(&unembed(&c.into_owned(), n, m)))).collect();
        let raw = DMatrix::from_columns(&cols);
        let svd = raw.svd(true, false);
        let u = svd.u.unwrap();
        let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-8).collect();
        q = DMatrix::from_columns(&keep.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    }
    let cols: Vec<DVector<f64>> = q
        .column_iter()
        .map(|c| {
            let x = unembed(&c.into_owned(), n, m);
            q.transpose() * embed(&restrict(&omega_plus_k_orbital(model, basis, phi, &x)))
        })
        .collect();
    let a = DMatrix::from_columns(&cols);
    let b = q.transpose() * embed(&restrict(rhs));
    let y = a.lu().solve(&b).expect("tangent operator is singular");
    unembed(&(q * y), n, m)
}

/// Constrained minimization of `E` by projected gradient descent on the
/// Stiefel manifold with a QR retraction; independent of the SCF path.
pub fn projected_gradient_ground_state(
    model: &MeanFieldModel,
    basis: &PlaneWaveBasis,
    start: &OrbitalSet,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> (CMatrix, f64) {
    let mut phi = start.coeffs().clone();
    for _ in 0..max_iter {
        let p = projector(&phi);
        let h = hamiltonian(model, basis, &p);
        let hphi = &h * &phi;
        let grad = &hphi - &phi * (phi.adjoint() * &hphi);
        if grad.norm() < tol {
            break;
        }
        let y = &phi - grad * Complex64::new(step, 0.0);
        phi = y.qr().q();
    }
    let e = energy(model, basis, &projector(&phi));
    (phi, e)
}
