//! Principal components with the `F'F/T = I` normalization.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;

/// Estimated factors and loadings of a `T x N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModelFit {
    /// `T x r`, normalized so that `F'F / T = I`.
    pub factors: DMatrix<f64>,
    /// `N x r`, with `Lambda' Lambda` diagonal.
    pub loadings: DMatrix<f64>,
    /// Squared singular values of `X / sqrt(NT)`, descending.
    pub eigenvalues: DVector<f64>,
}

impl FactorModelFit {
    pub fn r(&self) -> usize {
        self.factors.ncols()
    }

    pub fn common_component(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }
}

pub fn common_component(fit: &FactorModelFit) -> DMatrix<f64> {
    fit.common_component()
}

// Below this ratio d_r^2 / d_1^2 the N x N Gram route loses orthonormality of F.
const GRAM_COND: f64 = 1e-6;
const SVD_MAX_ITER: usize = 10_000;

/// Rank-`r` principal components of a complete matrix.
///
/// `F = sqrt(T) U_r`, `Lambda = sqrt(N) V_r D_r` from the SVD of `X / sqrt(NT)`; each
/// column pair is signed so the largest-magnitude entry of `V_r[:, k]` is positive.
pub fn apc(x: &DMatrix<f64>, r: usize) -> Result<FactorModelFit> {
    let (t, n) = x.shape();
    if r == 0 {
        return Err(Error::ZeroRank);
    }
    let m = t.min(n);
    if r > m {
        return Err(Error::RankTooLarge { r, max: m });
    }
    let scale = 1.0 / (n as f64 * t as f64);
    let mut fit = if t <= n {
        let g = (x * x.transpose()) * scale;
        let (vals, vecs) = sorted_symmetric_eigen(g);
        let factors = vecs.columns(0, r) * libm::sqrt(t as f64);
        let loadings = x.transpose() * &factors / t as f64;
        let eigenvalues = DVector::from_iterator(r, vals.iter().take(r).map(|&v| v.max(0.0)));
        FactorModelFit {
            factors,
            loadings,
            eigenvalues,
        }
    } else {
        let g = (x.transpose() * x) * scale;
        let (vals, vecs) = sorted_symmetric_eigen(g);
        let top = vals[0].max(0.0);
        if top > 0.0 && vals[r - 1] > GRAM_COND * top {
            let v = vecs.columns(0, r).into_owned();
            let d = DVector::from_iterator(r, vals.iter().take(r).map(|&v| libm::sqrt(v)));
            let mut loadings = v.clone() * libm::sqrt(n as f64);
            let mut factors = x * &v;
            for k in 0..r {
                loadings.column_mut(k).scale_mut(d[k]);
                factors
                    .column_mut(k)
                    .scale_mut(1.0 / (libm::sqrt(n as f64) * d[k]));
            }
            FactorModelFit {
                factors,
                loadings,
                eigenvalues: d.map(|v| v * v),
            }
        } else {
            apc_svd(x, r)?
        }
    };
    fix_signs(&mut fit);
    Ok(fit)
}

fn apc_svd(x: &DMatrix<f64>, r: usize) -> Result<FactorModelFit> {
    let (t, n) = x.shape();
    let z = x / libm::sqrt(n as f64 * t as f64);
    let svd = SVD::try_new(z, true, false, f64::EPSILON, SVD_MAX_ITER).ok_or(Error::SvdFailure)?;
    let u = svd.u.as_ref().ok_or(Error::SvdFailure)?;
    let mut order: alloc::vec::Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let keep = &order[..r];
    let factors = u.select_columns(keep.iter()) * libm::sqrt(t as f64);
    let loadings = x.transpose() * &factors / t as f64;
    let eigenvalues = DVector::from_iterator(
        r,
        keep.iter().map(|&k| svd.singular_values[k] * svd.singular_values[k]),
    );
    Ok(FactorModelFit {
        factors,
        loadings,
        eigenvalues,
    })
}

fn fix_signs(fit: &mut FactorModelFit) {
    for k in 0..fit.r() {
        let col = if fit.loadings.column(k).iter().any(|&v| v != 0.0) {
            fit.loadings.column(k)
        } else {
            fit.factors.column(k)
        };
        let mut best = 0.0_f64;
        let mut best_val = 0.0_f64;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                best_val = v;
            }
        }
        if best_val < 0.0 {
            fit.loadings.column_mut(k).neg_mut();
            fit.factors.column_mut(k).neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pseudo(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = crate::rng::SubstreamRng::new(seed, &[]);
        DMatrix::from_fn(t, n, |_, _| rng.gen::<f64>() - 0.5)
    }

    fn check_normalization(fit: &FactorModelFit) {
        let t = fit.factors.nrows() as f64;
        let ftf = fit.factors.transpose() * &fit.factors / t;
        assert!((ftf - DMatrix::identity(fit.r(), fit.r())).amax() < 1e-8);
        let ll = fit.loadings.transpose() * &fit.loadings;
        let top = ll.diagonal().amax();
        for a in 0..fit.r() {
            for b in 0..fit.r() {
                if a != b {
                    assert!(ll[(a, b)].abs() <= 1e-8 * top);
                }
            }
        }
        for k in 1..fit.r() {
            assert!(fit.eigenvalues[k] <= fit.eigenvalues[k - 1]);
        }
    }

    #[test]
    fn rank_one_exact() {
        let f = DVector::from_vec(alloc::vec![1.0, -2.0, 0.5, 3.0, 1.5]);
        let l = DVector::from_vec(alloc::vec![2.0, 1.0, -1.0]);
        let x = &f * l.transpose();
        let fit = apc(&x, 1).unwrap();
        assert_relative_eq!(fit.common_component(), x, epsilon = 1e-10);
    }

    #[test]
    fn normalization_both_orientations() {
        for &(t, n) in &[(30, 12), (12, 30), (20, 20)] {
            let x = pseudo(t, n, (t * n) as u64);
            for r in 1..=4 {
                check_normalization(&apc(&x, r).unwrap());
            }
        }
    }

    #[test]
    fn full_rank_reconstructs() {
        for &(t, n) in &[(9, 6), (6, 9)] {
            let x = pseudo(t, n, 3);
            let fit = apc(&x, t.min(n)).unwrap();
            assert!((fit.common_component() - &x).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_singular_values_are_kept() {
        let f = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let l = DVector::from_vec(alloc::vec![1.0, -1.0, 2.0]);
        let x = &f * l.transpose();
        let fit = apc(&x, 3).unwrap();
        assert!(fit.eigenvalues[1].abs() < 1e-12);
        assert!(fit.eigenvalues[2].abs() < 1e-12);
        check_normalization(&fit);
        assert!((fit.common_component() - &x).amax() < 1e-10);
    }

    #[test]
    fn sign_convention() {
        let x = pseudo(15, 8, 11);
        let fit = apc(&x, 3).unwrap();
        for k in 0..3 {
            let col = fit.loadings.column(k);
            let idx = col.iamax();
            assert!(col[idx] > 0.0);
        }
        let neg = apc(&(-&x), 3).unwrap();
        assert_relative_eq!(neg.loadings, fit.loadings, epsilon = 1e-10);
        assert_relative_eq!(neg.factors, -&fit.factors, epsilon = 1e-10);
    }

    #[test]
    fn deterministic_and_scale_equivariant() {
        let x = pseudo(25, 40, 5);
        assert_eq!(apc(&x, 2).unwrap(), apc(&x, 2).unwrap());
        let c = apc(&x, 2).unwrap().common_component();
        let c3 = apc(&(&x * 3.0), 2).unwrap().common_component();
        assert!((c3 - c * 3.0).amax() < 1e-12);
    }

    #[test]
    fn rank_errors() {
        let x = pseudo(4, 3, 1);
        assert_eq!(apc(&x, 4).unwrap_err(), Error::RankTooLarge { r: 4, max: 3 });
        assert_eq!(apc(&x, 0).unwrap_err(), Error::ZeroRank);
    }

    #[test]
    fn gram_and_svd_routes_agree() {
        let x = pseudo(40, 10, 9);
        let a = apc(&x, 3).unwrap();
        let mut b = apc_svd(&x, 3).unwrap();
        fix_signs(&mut b);
        assert!((a.common_component() - b.common_component()).amax() < 1e-10);
        assert!((&a.eigenvalues - &b.eigenvalues).amax() < 1e-12);
    }
}
