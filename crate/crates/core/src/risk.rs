//! Portfolio and single-asset risk measures used to score covariance estimators.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::covariance::{sample_cov_matrix, CovEstimate};
use crate::error::{Error, Result};
use crate::linalg::min_symmetric_eigenvalue;
use crate::normal::{normal_cdf, normal_quantile};

/// Smallest eigenvalue a covariance must exceed before it is inverted.
pub const PD_TOL: f64 = 1e-10;

/// `Sigma^-1 1 / (1' Sigma^-1 1)`.
pub fn min_variance_weights(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch {
            expected: (n, n),
            found: cov.shape(),
        });
    }
    if !(min_symmetric_eigenvalue(cov) > PD_TOL) {
        return Err(Error::SingularCovariance);
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or(Error::SingularCovariance)?;
    let x = chol.solve(&DVector::from_element(n, 1.0));
    let total = x.sum();
    Ok(x / total)
}

pub fn equal_weights(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

fn portfolio_returns(returns: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    returns * weights
}

/// Population standard deviation of `returns * weights`.
pub fn portfolio_volatility_realized(returns: &DMatrix<f64>, weights: &DVector<f64>) -> f64 {
    let rp = portfolio_returns(returns, weights);
    let t = rp.len() as f64;
    let mean = rp.sum() / t;
    let ss: f64 = rp.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / t)
}

/// `sqrt(w' Sigma w)`.
pub fn portfolio_volatility_model(cov: &DMatrix<f64>, weights: &DVector<f64>) -> Result<f64> {
    if cov.nrows() != weights.len() || cov.ncols() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: (weights.len(), weights.len()),
            found: cov.shape(),
        });
    }
    let q = (weights.transpose() * cov * weights)[(0, 0)];
    if q < 0.0 {
        return Err(Error::NegativeQuadraticForm);
    }
    Ok(libm::sqrt(q))
}

/// Gaussian value-at-risk `z_alpha * pvol - mean`, a positive number for a loss.
pub fn value_at_risk(pvol: f64, mean: f64, alpha: f64) -> f64 {
    normal_quantile(alpha) * pvol - mean
}

/// Negative of the `(1 - alpha)` empirical quantile of demeaned portfolio returns.
pub fn empirical_value_at_risk(portfolio: &DVector<f64>, alpha: f64) -> f64 {
    let t = portfolio.len();
    let mean = portfolio.sum() / t as f64;
    let mut sorted: Vec<f64> = portfolio.iter().map(|v| v - mean).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let pos = (1.0 - alpha) * (t - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(t - 1);
    let frac = pos - lo as f64;
    -(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// European call price under Black-Scholes; `sigma = 0` gives the deterministic limit.
pub fn black_scholes_call(sigma: f64, s0: f64, strike: f64, rate: f64, tau: f64) -> f64 {
    let discounted = strike * libm::exp(-rate * tau);
    if sigma <= 0.0 || tau <= 0.0 {
        return (s0 - discounted).max(0.0);
    }
    let vol = sigma * libm::sqrt(tau);
    let d1 = (libm::log(s0 / strike) + (rate + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    s0 * normal_cdf(d1) - discounted * normal_cdf(d2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionTerms {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub tau: f64,
}

impl Default for OptionTerms {
    fn default() -> Self {
        OptionTerms {
            spot: 1.0,
            strike: 1.0,
            rate: 0.02,
            tau: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frequency {
    Daily,
    Weekly,
    Monthly,
    Quarterly,
    Annual,
}

impl Frequency {
    pub fn periods_per_year(self) -> f64 {
        match self {
            Frequency::Daily => 252.0,
            Frequency::Weekly => 52.0,
            Frequency::Monthly => 12.0,
            Frequency::Quarterly => 4.0,
            Frequency::Annual => 1.0,
        }
    }
}

/// Benchmark used for the "true" value-at-risk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarBenchmark {
    /// Gaussian formula applied to the realized portfolio volatility.
    Gaussian,
    /// Empirical quantile of realized portfolio returns.
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskSettings {
    pub alpha: f64,
    pub frequency: Frequency,
    pub option: OptionTerms,
    /// Multiplier applied to every reported measure (100 reports percent and cents).
    pub units_scale: f64,
    pub var_benchmark: VarBenchmark,
}

impl Default for RiskSettings {
    fn default() -> Self {
        RiskSettings {
            alpha: 0.95,
            frequency: Frequency::Monthly,
            option: OptionTerms::default(),
            units_scale: 1.0,
            var_benchmark: VarBenchmark::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub pvol: f64,
    pub pvar: f64,
    pub call_prices: Vec<f64>,
    pub variances: Vec<f64>,
    pub covariances: Vec<f64>,
    /// Portfolio weights behind `pvol` and `pvar`.
    pub weights: DVector<f64>,
}

/// Estimated measures next to their values on the true returns.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskComparison {
    pub estimate: RiskReport,
    pub truth: RiskReport,
}

/// Covariance pairs scored for incomplete series: every (complete, incomplete) pair, then
/// every pair of distinct incomplete series.
pub fn covariance_pairs(n: usize, incomplete: &[usize]) -> Vec<(usize, usize)> {
    let mut is_inc = alloc::vec![false; n];
    for &m in incomplete {
        is_inc[m] = true;
    }
    let mut pairs = Vec::new();
    for &m in incomplete {
        for k in (0..n).filter(|&k| !is_inc[k]) {
            pairs.push((k, m));
        }
    }
    for (a, &m) in incomplete.iter().enumerate() {
        for &m2 in &incomplete[a + 1..] {
            pairs.push((m, m2));
        }
    }
    pairs
}

fn per_series(cov: &DMatrix<f64>, incomplete: &[usize], settings: &RiskSettings) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let scale = settings.units_scale;
    let o = settings.option;
    let ppy = settings.frequency.periods_per_year();
    let variances: Vec<f64> = incomplete.iter().map(|&m| cov[(m, m)]).collect();
    let calls = variances
        .iter()
        .map(|&v| {
            let sigma = libm::sqrt((ppy * v).max(0.0));
            scale * black_scholes_call(sigma, o.spot, o.strike, o.rate, o.tau)
        })
        .collect();
    let covs = covariance_pairs(cov.nrows(), incomplete)
        .into_iter()
        .map(|(a, b)| scale * cov[(a, b)])
        .collect();
    (calls, variances.into_iter().map(|v| scale * v).collect(), covs)
}

/// Measures implied by a covariance matrix, with equally weighted portfolios.
pub fn risk_measures(cov: &DMatrix<f64>, incomplete: &[usize], settings: &RiskSettings) -> Result<RiskReport> {
    let weights = equal_weights(cov.nrows());
    let pvol = portfolio_volatility_model(cov, &weights)?;
    let (call_prices, variances, covariances) = per_series(cov, incomplete, settings);
    Ok(RiskReport {
        pvol: settings.units_scale * pvol,
        pvar: settings.units_scale * value_at_risk(pvol, 0.0, settings.alpha),
        call_prices,
        variances,
        covariances,
        weights,
    })
}

/// Measures from an estimated covariance next to those from the true complete returns.
pub fn risk_report(
    cov: &CovEstimate,
    true_returns: &DMatrix<f64>,
    incomplete: &[usize],
    settings: &RiskSettings,
) -> Result<RiskComparison> {
    if true_returns.ncols() != cov.n() {
        return Err(Error::DimensionMismatch {
            expected: (true_returns.nrows(), cov.n()),
            found: true_returns.shape(),
        });
    }
    let estimate = risk_measures(&cov.matrix, incomplete, settings)?;
    let truth_cov = sample_cov_matrix(true_returns);
    let weights = equal_weights(cov.n());
    let pvol = portfolio_volatility_realized(true_returns, &weights);
    let pvar = match settings.var_benchmark {
        VarBenchmark::Gaussian => value_at_risk(pvol, 0.0, settings.alpha),
        VarBenchmark::Empirical => {
            empirical_value_at_risk(&portfolio_returns(true_returns, &weights), settings.alpha)
        }
    };
    let (call_prices, variances, covariances) = per_series(&truth_cov, incomplete, settings);
    Ok(RiskComparison {
        estimate,
        truth: RiskReport {
            pvol: settings.units_scale * pvol,
            pvar: settings.units_scale * pvar,
            call_prices,
            variances,
            covariances,
            weights,
        },
    })
}
