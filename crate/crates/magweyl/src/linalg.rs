//! Dense complex linear algebra helpers.
//!
//! Operator kernels are dense complex matrices of modest size (at most a
//! few thousand rows).  Products are evaluated as four real products with
//! the cache-blocked real kernel of `nalgebra`, split over column blocks
//! with `rayon`; Hermitian eigenproblems and singular values use
//! `nalgebra` decompositions.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;

fn split(m: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

/// Matrix product `a · b`.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matrix product dimension mismatch");
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let n = b.ncols();
    let block = 64usize;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let parts: Vec<(usize, DMatrix<f64>, DMatrix<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let w = block.min(n - s);
            let brs = br.columns(s, w);
            let bis = bi.columns(s, w);
            let re = &ar * &brs - &ai * &bis;
            let im = &ar * &bis + &ai * &brs;
            (s, re, im)
        })
        .collect();
    let mut out = CMatrix::zeros(a.nrows(), n);
    for (s, re, im) in parts {
        for j in 0..re.ncols() {
            for i in 0..re.nrows() {
                out[(i, s + j)] = C64::new(re[(i, j)], im[(i, j)]);
            }
        }
    }
    out
}

/// Conjugate transpose.
pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

/// Largest entrywise modulus.
pub fn sup_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of `|a - a†|`, relative to `max(1, sup|a|)`.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / sup_norm(a).max(1.0)
}

/// Eigen-decomposition `a = V diag(w) V†` of a Hermitian matrix, with
/// eigenvalues in ascending order and eigenvectors as columns of `V`.
pub fn hermitian_eig(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if a.nrows() != a.ncols() {
        return Err(Error::Domain("eigenproblem needs a square matrix".into()));
    }
    // Symmetrise to remove roundoff asymmetry before the solver.
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::try_new(sym, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let w: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut v = CMatrix::zeros(a.nrows(), a.ncols());
    for (c, &i) in order.iter().enumerate() {
        v.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok((w, v))
}

/// Largest singular value (operator norm).
pub fn operator_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s = a.clone().singular_values();
    s.iter().cloned().fold(0.0, f64::max)
}

/// `V diag(d) V†`.
pub fn from_eigen(v: &CMatrix, d: &[C64]) -> CMatrix {
    let mut vd = v.clone();
    for (j, &dj) in d.iter().enumerate() {
        vd.column_mut(j).scale_mut_complex(dj);
    }
    matmul(&vd, &v.adjoint())
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, c: C64);
}

impl<S> ScaleComplex for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_complex(&mut self, c: C64) {
        for z in self.iter_mut() {
            *z *= c;
        }
    }
}
