//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{CMat, CVec, C64};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted descending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(m.nrows(), n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a real symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Orthonormal basis of the column span of `m` via thin QR.
///
/// Columns whose residual norm falls below `rel_tol` times the largest column norm are dropped.
pub fn orthonormal_columns(m: &CMat, rel_tol: f64) -> CMat {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut cols: Vec<CVec> = Vec::with_capacity(m.ncols());
    for c in m.column_iter() {
        let mut v: CVec = c.into_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dotc(&v);
                v -= q * p;
            }
        }
        let nv = v.norm();
        if nv > rel_tol * scale && nv > 0.0 {
            cols.push(v / C64::new(nv, 0.0));
        }
    }
    if cols.is_empty() {
        return CMat::zeros(m.nrows(), 0);
    }
    CMat::from_columns(&cols)
}

/// Completes `q` (orthonormal columns) to a unitary matrix.
pub fn complete_unitary(q: &CMat) -> CMat {
    let n = q.nrows();
    let mut cols: Vec<CVec> = q.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = CVec::zeros(n);
        v[e] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &cols {
                let p = c.dotc(&v);
                v -= c * p;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / C64::new(nv, 0.0));
        }
    }
    CMat::from_columns(&cols)
}

/// Hermitian PSD square root.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)));
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Real part of the trace.
pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Squared Frobenius norm.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Solves the least-squares problem `min ‖A X − B‖_F` through the pseudo-inverse of `A`.
pub fn least_squares(a: &CMat, b: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol).unwrap_or_else(|_| CMat::zeros(a.ncols(), b.ncols()))
}

/// `exp(j·x)`.
pub fn cis(x: f64) -> C64 {
    C64::from_polar(1.0, x)
}
