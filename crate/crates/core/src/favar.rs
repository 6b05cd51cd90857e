//! Factor-augmented regression on estimated factors with a White sandwich covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::impute::ImputationResult;
use crate::linalg::{least_squares, spd_inverse};

#[derive(Clone, Debug, PartialEq)]
pub struct FavarFit {
    /// Factor coefficients (identified up to the factor rotation) stacked over covariate
    /// coefficients.
    pub delta: DVector<f64>,
    /// Heteroskedasticity-robust covariance of `delta`.
    pub cov: DMatrix<f64>,
    pub h: usize,
    pub t_used: usize,
    pub n_factors: usize,
    /// `z_t' delta` for `t = 0..T-h`, aligned with `y[t + h]`.
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

impl FavarFit {
    pub fn alpha(&self) -> DVector<f64> {
        self.delta.rows(0, self.n_factors).into_owned()
    }

    pub fn beta(&self) -> DVector<f64> {
        self.delta
            .rows(self.n_factors, self.delta.len() - self.n_factors)
            .into_owned()
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| libm::sqrt(v.max(0.0)))
    }
}

/// Regress `y[t + h]` on `(F_t', W_t')'` for `t = 0..T-h`.
///
/// `w` may have zero columns.
pub fn favar_fit_factors(
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    h: usize,
) -> Result<FavarFit> {
    let t = factors.nrows();
    if y.len() != t || w.nrows() != t {
        return Err(Error::DimensionMismatch {
            expected: (t, w.ncols()),
            found: (y.len(), w.nrows()),
        });
    }
    let (r, q) = (factors.ncols(), w.ncols());
    let k = r + q;
    if t < h + k + 1 {
        return Err(Error::HorizonTooLarge { h, t, k });
    }
    let used = t - h;
    let z = DMatrix::from_fn(used, k, |s, j| {
        if j < r {
            factors[(s, j)]
        } else {
            w[(s, j - r)]
        }
    });
    let target = DVector::from_iterator(used, (0..used).map(|s| y[s + h]));
    let delta = least_squares(&z, &target).ok_or(Error::RankDeficientDesign)?;
    let fitted = &z * &delta;
    let residuals = &target - &fitted;
    let s = z.transpose() * &z / used as f64;
    let s_inv = spd_inverse(&s).ok_or(Error::RankDeficientDesign)?;
    let mut middle = DMatrix::zeros(k, k);
    for row in 0..used {
        let e2 = residuals[row] * residuals[row];
        for a in 0..k {
            let za = z[(row, a)] * e2;
            for b in 0..k {
                middle[(a, b)] += za * z[(row, b)];
            }
        }
    }
    middle /= used as f64;
    let cov = &s_inv * middle * &s_inv / used as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(FavarFit {
        delta,
        cov,
        h,
        t_used: used,
        n_factors: r,
        fitted,
        residuals,
    })
}

/// Factor-augmented regression using the factors of an imputation result.
pub fn favar_fit(
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    result: &ImputationResult,
    h: usize,
) -> Result<FavarFit> {
    favar_fit_factors(y, w, &result.fit.factors, h)
}
