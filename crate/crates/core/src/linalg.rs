//! Small dense helpers shared by the estimators.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative threshold below which an eigenvalue or pivot counts as zero.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = eig.eigenvectors.select_columns(order.iter());
    (values, vectors)
}

/// Inverse of a symmetric positive definite matrix, `None` when numerically singular.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return None;
    }
    if eig.eigenvalues.iter().any(|&v| v <= RANK_TOL * max) {
        return None;
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let v = &eig.eigenvectors;
    Some(v * DMatrix::from_diagonal(&inv_vals) * v.transpose())
}

/// Least squares `argmin |a b - y|` through a Householder QR; `None` if `a` is rank deficient.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let k = a.ncols();
    if a.nrows() < k || k == 0 {
        return None;
    }
    let scale = a.column_iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    if !(scale > 0.0) {
        return None;
    }
    let qr = a.clone().qr();
    let r = qr.r();
    if (0..k).any(|j| r[(j, j)].abs() <= RANK_TOL * scale) {
        return None;
    }
    let mut rhs = y.clone();
    qr.q_tr_mul(&mut rhs);
    let head = rhs.rows(0, k).into_owned();
    r.solve_upper_triangular(&head)
}

/// Multi-response least squares, one column of `y` at a time.
pub fn least_squares_multi(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut out = DMatrix::zeros(a.ncols(), y.ncols());
    for j in 0..y.ncols() {
        let b = least_squares(a, &y.column(j).into_owned())?;
        out.set_column(j, &b);
    }
    Some(out)
}

/// Smallest eigenvalue of `(m + m') / 2`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sorted_symmetric_eigen(m);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, 1.0]);
        assert_relative_eq!(vecs[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn least_squares_exact_fit() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(alloc::vec![1.0, 3.0, 5.0, 7.0]);
        let b = least_squares(&a, &y).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_rejects_collinear() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0]);
        assert!(least_squares(&a, &y).is_none());
    }

    #[test]
    fn spd_inverse_roundtrip_and_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m).unwrap();
        assert_relative_eq!(&m * inv, DMatrix::identity(2, 2), epsilon = 1e-12);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_inverse(&s).is_none());
    }
}
