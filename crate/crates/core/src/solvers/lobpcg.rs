//! Block LOBPCG for the lowest eigenpairs of a Hermitian operator, with an
//! optional linear constraint (e.g. a tangent-space projection) applied to
//! every search direction.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::orbitals::{CMatrix, OrbitalSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobpcgOptions {
    /// Absolute bound on each `|A x - lambda x|`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LobpcgOutcome<T: ComplexField> {
    /// Nondecreasing.
    pub eigenvalues: Vec<f64>,
    pub vectors: DMatrix<T>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Scalars LOBPCG can work in.
pub trait Scalar: ComplexField<RealField = f64> + Copy {
    fn random(rng: &mut ChaCha8Rng) -> Self;
}

impl Scalar for f64 {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        rng.gen::<f64>() - 0.5
    }
}

impl Scalar for Complex64 {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }
}

/// Seeded random block.
pub fn random_block<T: Scalar>(rows: usize, cols: usize, seed: u64) -> DMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| T::random(&mut rng))
}

/// Orthonormalizes the columns of `s` by two-pass Gram-Schmidt against the
/// leading `fixed` columns (assumed orthonormal) and each other; columns that
/// lose more than ten digits are dropped.
fn orthonormalize_columns<T: Scalar>(s: &DMatrix<T>, fixed: usize) -> DMatrix<T> {
    let mut kept: Vec<nalgebra::DVector<T>> = (0..fixed).map(|j| s.column(j).into_owned()).collect();
    for j in fixed..s.ncols() {
        let mut v = s.column(j).into_owned();
        let start = v.norm();
        if start == 0.0 || !start.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let c = q.dotc(&v);
                v.axpy(-c, q, T::one());
            }
        }
        let n = v.norm();
        if n > 1e-10 * start {
            v.unscale_mut(n);
            kept.push(v);
        }
    }
    DMatrix::from_columns(&kept)
}

fn rayleigh_ritz<T: Scalar>(s: &DMatrix<T>, as_: &DMatrix<T>, k: usize) -> (Vec<f64>, DMatrix<T>) {
    let h = s.adjoint() * as_;
    let h = (&h + h.adjoint()).unscale(2.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let c = DMatrix::from_columns(&order[..k].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (lam, c)
}

/// Lowest `x0.ncols()` eigenpairs. Never fails on slow convergence: the
/// outcome carries a `converged` flag instead.
pub fn lobpcg_block<T, A, P, C>(
    mut apply: A,
    mut precond: P,
    mut constrain: C,
    x0: DMatrix<T>,
    opts: &LobpcgOptions,
) -> Result<LobpcgOutcome<T>>
where
    T: Scalar,
    A: FnMut(&DMatrix<T>) -> DMatrix<T>,
    P: FnMut(&DMatrix<T>, &[f64]) -> DMatrix<T>,
    C: FnMut(&mut DMatrix<T>),
{
    let (n, k) = x0.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot compute {k} eigenpairs of a {n}-dimensional operator")));
    }
    let mut x = x0;
    constrain(&mut x);
    let mut q = orthonormalize_columns(&x, 0);
    let mut restart = 0u64;
    while q.ncols() < k {
        // rank-deficient start: top up with seeded random directions
        restart += 1;
        if restart > 10 {
            return Err(Error::InvalidInput("constrained space is smaller than the requested block".into()));
        }
        let mut extra = random_block::<T>(n, k, opts.seed.wrapping_add(restart));
        constrain(&mut extra);
        let mut both = DMatrix::zeros(n, q.ncols() + k);
        both.columns_mut(0, q.ncols()).copy_from(&q);
        both.columns_mut(q.ncols(), k).copy_from(&extra);
        q = orthonormalize_columns(&both, q.ncols());
    }
    let q = q.columns(0, k).into_owned();
    let aq = apply(&q);
    let (mut lam, c) = rayleigh_ritz(&q, &aq, k);
    let mut x = &q * &c;
    let mut ax = &aq * &c;
    let mut p: Option<DMatrix<T>> = None;
    let mut residuals = vec![f64::INFINITY; k];

    for it in 0..=opts.max_iter {
        let mut r = ax.clone();
        for j in 0..k {
            let l = T::from_real(lam[j]);
            let xj = x.column(j).into_owned();
            r.column_mut(j).axpy(-l, &xj, T::one());
        }
        residuals = r.column_iter().map(|c| c.norm()).collect();
        if residuals.iter().all(|&res| res <= opts.tol) {
            return Ok(LobpcgOutcome {
                eigenvalues: lam,
                vectors: x,
                residuals,
                iterations: it,
                converged: true,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let active: Vec<usize> = (0..k).filter(|&j| residuals[j] > opts.tol).collect();
        let r_act = DMatrix::from_columns(&active.iter().map(|&j| r.column(j)).collect::<Vec<_>>());
        let lam_act: Vec<f64> = active.iter().map(|&j| lam[j]).collect();
        let mut w = precond(&r_act, &lam_act);
        constrain(&mut w);

        let extra = w.ncols() + p.as_ref().map_or(0, |p| p.ncols());
        let mut s = DMatrix::zeros(n, k + extra);
        s.columns_mut(0, k).copy_from(&x);
        s.columns_mut(k, w.ncols()).copy_from(&w);
        if let Some(p) = &p {
            s.columns_mut(k + w.ncols(), p.ncols()).copy_from(p);
        }
        let s = orthonormalize_columns(&s, k);
        let as_ = apply(&s);
        let (l, c) = rayleigh_ritz(&s, &as_, k);
        let m = s.ncols();
        p = if m > k {
            let cr = c.rows(k, m - k);
            Some(s.columns(k, m - k) * cr)
        } else {
            None
        };
        x = &s * &c;
        ax = &as_ * &c;
        lam = l;
        // re-orthonormalize X to keep rounding from accumulating
        if it % 20 == 19 {
            let q = orthonormalize_columns(&x, 0);
            if q.ncols() == k {
                let aq = apply(&q);
                let (l, c) = rayleigh_ritz(&q, &aq, k);
                x = &q * &c;
                ax = &aq * &c;
                lam = l;
                p = None;
            }
        }
    }
    Ok(LobpcgOutcome {
        eigenvalues: lam,
        vectors: x,
        residuals,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// `(diag + 1)^{-1}` column-wise preconditioner for a kinetic-like diagonal.
pub fn kinetic_preconditioner(diag: &[f64]) -> impl FnMut(&CMatrix, &[f64]) -> CMatrix + '_ {
    move |r: &CMatrix, _lam: &[f64]| {
        let mut out = r.clone();
        for (i, d) in diag.iter().enumerate() {
            let s = 1.0 / (d + 1.0);
            for j in 0..out.ncols() {
                out[(i, j)] *= s;
            }
        }
        out
    }
}

/// Lowest `n_el` eigenpairs of a Hermitian operator on `C^{n_b}` from a seeded
/// random start; fails if the tolerance is not reached.
pub fn lobpcg<A, P>(
    apply: A,
    precond: P,
    n_b: usize,
    n_el: usize,
    opts: &LobpcgOptions,
) -> Result<(Vec<f64>, OrbitalSet)>
where
    A: FnMut(&CMatrix) -> CMatrix,
    P: FnMut(&CMatrix, &[f64]) -> CMatrix,
{
    if n_el == 0 || n_el > n_b {
        return Err(Error::InvalidInput(format!("cannot compute {n_el} eigenpairs in dimension {n_b}")));
    }
    let x0 = random_block::<Complex64>(n_b, n_el, opts.seed);
    let out = lobpcg_block(apply, precond, |_: &mut CMatrix| {}, x0, opts)?;
    if !out.converged {
        return Err(Error::NotConverged {
            what: "LOBPCG",
            iterations: out.iterations,
            residual: out.residuals.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok((out.eigenvalues, OrbitalSet::orthonormalize(out.vectors)?))
}
