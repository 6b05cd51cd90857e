//! Covariance estimation from imputed panels.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::impute::{ImputationResult, Method};
use crate::linalg::min_symmetric_eigenvalue;
use crate::panel::PanelMatrix;
use crate::rng::{stream, SubstreamRng};

/// How missing-cell residuals are drawn in the overlay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OverlayScheme {
    /// Resample the pooled observed residuals of all series.
    PooledResample,
    /// Resample the series' own observed residuals.
    SeriesResample,
    /// Normal draws scaled by the pooled residual standard deviation.
    PooledNormal,
    /// Normal draws scaled by the series' residual standard deviation.
    SeriesNormal,
}

impl OverlayScheme {
    pub const ALL: [OverlayScheme; 4] = [
        OverlayScheme::PooledResample,
        OverlayScheme::SeriesResample,
        OverlayScheme::PooledNormal,
        OverlayScheme::SeriesNormal,
    ];

    /// Scheme number 1-4.
    pub fn index(self) -> u8 {
        match self {
            OverlayScheme::PooledResample => 1,
            OverlayScheme::SeriesResample => 2,
            OverlayScheme::PooledNormal => 3,
            OverlayScheme::SeriesNormal => 4,
        }
    }

    pub fn from_index(j: u8) -> Option<Self> {
        OverlayScheme::ALL.iter().copied().find(|s| s.index() == j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CovMethod {
    Sm0,
    SmPlus0,
    Sm(OverlayScheme),
    SmPlus(OverlayScheme),
    Sf,
    SfPlus,
    Sfa,
    SfaPlus,
    Pairwise,
}

impl CovMethod {
    pub fn name(self) -> &'static str {
        use OverlayScheme::*;
        match self {
            CovMethod::Sm0 => "sm0",
            CovMethod::SmPlus0 => "sm+0",
            CovMethod::Sm(PooledResample) => "sm1",
            CovMethod::Sm(SeriesResample) => "sm2",
            CovMethod::Sm(PooledNormal) => "sm3",
            CovMethod::Sm(SeriesNormal) => "sm4",
            CovMethod::SmPlus(PooledResample) => "sm+1",
            CovMethod::SmPlus(SeriesResample) => "sm+2",
            CovMethod::SmPlus(PooledNormal) => "sm+3",
            CovMethod::SmPlus(SeriesNormal) => "sm+4",
            CovMethod::Sf => "sf",
            CovMethod::SfPlus => "sf+",
            CovMethod::Sfa => "sfa",
            CovMethod::SfaPlus => "sfa+",
            CovMethod::Pairwise => "pairwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let all = [
            CovMethod::Sm0,
            CovMethod::SmPlus0,
            CovMethod::Sf,
            CovMethod::SfPlus,
            CovMethod::Sfa,
            CovMethod::SfaPlus,
            CovMethod::Pairwise,
        ];
        let lower = s.to_ascii_lowercase();
        all.into_iter()
            .chain(OverlayScheme::ALL.iter().map(|&j| CovMethod::Sm(j)))
            .chain(OverlayScheme::ALL.iter().map(|&j| CovMethod::SmPlus(j)))
            .find(|m| m.name() == lower)
    }

    /// Whether the estimator is computed from a re-estimated imputation.
    pub fn uses_reestimate(self) -> bool {
        matches!(
            self,
            CovMethod::SmPlus0 | CovMethod::SmPlus(_) | CovMethod::SfPlus | CovMethod::SfaPlus
        )
    }

    pub fn overlay_scheme(self) -> Option<OverlayScheme> {
        match self {
            CovMethod::Sm(j) | CovMethod::SmPlus(j) => Some(j),
            _ => None,
        }
    }
}

impl core::fmt::Display for CovMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub method: CovMethod,
    /// Overlay draw count, 0 for non-overlay estimators.
    pub draws: usize,
    pub seed: u64,
    /// Set by estimators that can return indefinite matrices.
    pub positive_definite: Option<bool>,
}

impl CovEstimate {
    fn plain(matrix: DMatrix<f64>, method: CovMethod) -> Self {
        CovEstimate {
            matrix,
            method,
            draws: 0,
            seed: 0,
            positive_definite: None,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayConfig {
    pub scheme: OverlayScheme,
    pub draws: usize,
    pub seed: u64,
}

impl OverlayConfig {
    pub fn new(scheme: OverlayScheme, seed: u64) -> Self {
        OverlayConfig {
            scheme,
            draws: 100,
            seed,
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(1/T) sum_t (x_t - xbar)(x_t - xbar)'` of a complete matrix.
pub fn sample_cov_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    if t == 0 {
        return DMatrix::zeros(x.ncols(), x.ncols());
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / t as f64;
        col.add_scalar_mut(-mean);
    }
    symmetrize(centered.transpose() * &centered / t as f64)
}

pub fn sample_cov(x: &DMatrix<f64>) -> CovEstimate {
    CovEstimate::plain(sample_cov_matrix(x), CovMethod::Sm0)
}

/// Sample covariance of the completed panel (`sm0`, or `sm+0` for re-estimated results).
pub fn sm_cov(result: &ImputationResult) -> CovEstimate {
    let method = if result.method.is_reestimated() {
        CovMethod::SmPlus0
    } else {
        CovMethod::Sm0
    };
    CovEstimate::plain(sample_cov_matrix(&result.completed), method)
}

/// Pairwise-complete covariance with pair-specific means.
pub fn pairwise_cov(panel: &PanelMatrix) -> Result<CovEstimate> {
    let (tt, n) = (panel.t(), panel.n());
    let mut m = DMatrix::zeros(n, n);
    let mut common = Vec::with_capacity(tt);
    for i in 0..n {
        for j in i..n {
            common.clear();
            common.extend((0..tt).filter(|&t| panel.is_observed(t, i) && panel.is_observed(t, j)));
            if common.len() < 2 {
                return Err(Error::InsufficientOverlap(i, j));
            }
            let k = common.len() as f64;
            let v = panel.values();
            let mi = common.iter().map(|&t| v[(t, i)]).sum::<f64>() / k;
            let mj = common.iter().map(|&t| v[(t, j)]).sum::<f64>() / k;
            let c = common
                .iter()
                .map(|&t| (v[(t, i)] - mi) * (v[(t, j)] - mj))
                .sum::<f64>()
                / k;
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    let pd = min_symmetric_eigenvalue(&m) > 0.0;
    let mut est = CovEstimate::plain(m, CovMethod::Pairwise);
    est.positive_definite = Some(pd);
    Ok(est)
}

fn factor_part(result: &ImputationResult) -> DMatrix<f64> {
    let f = &result.fit.factors;
    let sigma_f = f.transpose() * f / result.t() as f64;
    let l = &result.fit.loadings;
    symmetrize(l * sigma_f * l.transpose())
}

/// Strict-factor estimator with residual variances over all `T` periods.
pub fn sf_cov(result: &ImputationResult) -> CovEstimate {
    let mut m = factor_part(result);
    let tt = result.t() as f64;
    for i in 0..result.n() {
        let ss: f64 = result.residuals.column(i).iter().map(|e| e * e).sum();
        m[(i, i)] += ss / tt;
    }
    let method = if result.method.is_reestimated() {
        CovMethod::SfPlus
    } else {
        CovMethod::Sf
    };
    CovEstimate::plain(m, method)
}

/// Strict-factor estimator with residual variances over observed periods only.
pub fn sfa_cov(result: &ImputationResult) -> Result<CovEstimate> {
    let mut m = factor_part(result);
    for (i, rows) in result.locators.per_series.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::SeriesTooShort(i));
        }
        let ss: f64 = result.residuals.column(i).iter().map(|e| e * e).sum();
        m[(i, i)] += ss / rows.len() as f64;
    }
    let method = if result.method.is_reestimated() {
        CovMethod::SfaPlus
    } else {
        CovMethod::Sfa
    };
    Ok(CovEstimate::plain(m, method))
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n - 1.0))
}

/// Prepared residual pools for overlay draws on one imputation result.
#[derive(Clone, Debug)]
pub struct OverlaySampler<'a> {
    result: &'a ImputationResult,
    config: OverlayConfig,
    pooled: Vec<f64>,
    own: Vec<Vec<f64>>,
    pooled_sd: f64,
    own_sd: Vec<f64>,
    incomplete: Vec<usize>,
}

impl<'a> OverlaySampler<'a> {
    pub fn new(result: &'a ImputationResult, config: OverlayConfig) -> Result<Self> {
        if config.draws == 0 {
            return Err(Error::InvalidArgument("overlay draw count must be at least 1"));
        }
        if result.method == Method::Em {
            return Err(Error::SchemeUnavailable);
        }
        let own: Vec<Vec<f64>> = result
            .locators
            .per_series
            .iter()
            .enumerate()
            .map(|(i, rows)| rows.iter().map(|&s| result.residuals[(s, i)]).collect())
            .collect();
        let incomplete = result.locators.incomplete_series();
        let pooled: Vec<f64> = own.iter().flatten().copied().collect();
        let mut own_sd = alloc::vec![0.0; own.len()];
        let mut pooled_sd = 0.0;
        match config.scheme {
            OverlayScheme::PooledResample => {
                if pooled.is_empty() {
                    return Err(Error::SchemeUnavailable);
                }
            }
            OverlayScheme::SeriesResample => {
                if let Some(&i) = incomplete.iter().find(|&&i| own[i].is_empty()) {
                    return Err(Error::EmptyResidualPool(i));
                }
            }
            OverlayScheme::PooledNormal => {
                if pooled.len() < 2 {
                    return Err(Error::SchemeUnavailable);
                }
                pooled_sd = sd(&pooled);
            }
            OverlayScheme::SeriesNormal => {
                for &i in &incomplete {
                    match own[i].len() {
                        0 => return Err(Error::EmptyResidualPool(i)),
                        1 => return Err(Error::SeriesTooShort(i)),
                        _ => own_sd[i] = sd(&own[i]),
                    }
                }
            }
        }
        Ok(OverlaySampler {
            result,
            config,
            pooled,
            own,
            pooled_sd,
            own_sd,
            incomplete,
        })
    }

    /// Residual drawn for missing cell `(t, i)` in draw `s`.
    pub fn residual(&self, s: usize, i: usize, t: usize) -> f64 {
        let mut rng = SubstreamRng::new(
            self.config.seed,
            &[stream::OVERLAY, s as u64, i as u64, t as u64],
        );
        match self.config.scheme {
            OverlayScheme::PooledResample => self.pooled[rng.gen_range(0..self.pooled.len())],
            OverlayScheme::SeriesResample => {
                let pool = &self.own[i];
                pool[rng.gen_range(0..pool.len())]
            }
            OverlayScheme::PooledNormal => self.pooled_sd * rng.sample::<f64, _>(StandardNormal),
            OverlayScheme::SeriesNormal => self.own_sd[i] * rng.sample::<f64, _>(StandardNormal),
        }
    }

    /// Completed panel with missing cells overlaid by draw `s`.
    pub fn overlaid_panel(&self, s: usize) -> DMatrix<f64> {
        let res = self.result;
        let mut x = res.completed.clone();
        for &i in &self.incomplete {
            for t in 0..res.t() {
                if !res.mask[(t, i)] {
                    x[(t, i)] = res.common[(t, i)] + self.residual(s, i, t);
                }
            }
        }
        x
    }

    /// Sample covariance of draw `s`.
    pub fn draw_cov(&self, s: usize) -> DMatrix<f64> {
        sample_cov_matrix(&self.overlaid_panel(s))
    }

    pub fn method(&self) -> CovMethod {
        if self.result.method.is_reestimated() {
            CovMethod::SmPlus(self.config.scheme)
        } else {
            CovMethod::Sm(self.config.scheme)
        }
    }

    pub fn config(&self) -> OverlayConfig {
        self.config
    }

    /// Average of per-draw covariances supplied in draw order.
    pub fn average<I: IntoIterator<Item = DMatrix<f64>>>(&self, draws: I) -> CovEstimate {
        let n = self.result.n();
        let mut mean = DMatrix::zeros(n, n);
        for (k, d) in draws.into_iter().enumerate() {
            let w = 1.0 / (k + 1) as f64;
            mean.zip_apply(&d, |m, v| *m += (v - *m) * w);
        }
        CovEstimate {
            matrix: mean,
            method: self.method(),
            draws: self.config.draws,
            seed: self.config.seed,
            positive_definite: None,
        }
    }
}

/// Residual-overlay estimator: average of `S` sample covariances of overlaid panels.
pub fn overlay_cov(result: &ImputationResult, config: OverlayConfig) -> Result<CovEstimate> {
    let sampler = OverlaySampler::new(result, config)?;
    Ok(sampler.average((0..config.draws).map(|s| sampler.draw_cov(s))))
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(cov: &CovEstimate) -> f64 {
    min_symmetric_eigenvalue(&cov.matrix)
}
