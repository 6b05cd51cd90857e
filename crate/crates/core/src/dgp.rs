//! Simulated factor panels and missing-value patterns.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;
use crate::rng::{stream, SubstreamRng};

/// Approximate factor model `X = F Lambda' + e` with `F, Lambda ~ N(0, D_r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasicDgpConfig {
    pub t: usize,
    pub n: usize,
    pub r: usize,
    pub sigma2_e: f64,
    pub seed: u64,
    /// Draw factors and loadings once per seed and only redraw errors per replication.
    pub fixed_factors: bool,
    /// Seed for the factor and loading draws; defaults to `seed`.
    pub factor_seed: Option<u64>,
    /// `diag(D_r)` equally spaced from 1 to `1/r`; otherwise `D_r = I`.
    pub declining_factor_variance: bool,
}

impl BasicDgpConfig {
    pub fn new(t: usize, n: usize, r: usize, sigma2_e: f64, seed: u64) -> Self {
        BasicDgpConfig {
            t,
            n,
            r,
            sigma2_e,
            seed,
            fixed_factors: false,
            factor_seed: None,
            declining_factor_variance: true,
        }
    }
}

/// A simulated complete panel with its components.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelMatrix,
    pub common: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub errors: DMatrix<f64>,
    /// Idiosyncratic variance of each series.
    pub error_variances: DVector<f64>,
}

/// `diag(D_r)`: `r` values equally spaced from 1 down to `1/r`.
pub fn factor_variances(r: usize) -> Vec<f64> {
    if r == 1 {
        return alloc::vec![1.0];
    }
    let last = 1.0 / r as f64;
    (0..r)
        .map(|k| 1.0 + (last - 1.0) * k as f64 / (r - 1) as f64)
        .collect()
}

fn normal_matrix(rng: &mut SubstreamRng, rows: usize, cols: usize, sd: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for k in 0..cols {
        for a in 0..rows {
            m[(a, k)] = sd[k] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

pub fn gen_basic_dgp(config: &BasicDgpConfig, replication: u64) -> Result<SimulatedPanel> {
    let BasicDgpConfig { t, n, r, .. } = *config;
    if r == 0 || r > t.min(n) {
        return Err(Error::RankTooLarge { r, max: t.min(n) });
    }
    if !(config.sigma2_e >= 0.0) {
        return Err(Error::InvalidArgument("sigma2_e must be nonnegative"));
    }
    let sd: Vec<f64> = if config.declining_factor_variance {
        factor_variances(r).into_iter().map(libm::sqrt).collect()
    } else {
        alloc::vec![1.0; r]
    };
    let factor_rep = if config.fixed_factors { 0 } else { replication };
    let factor_seed = config.factor_seed.unwrap_or(config.seed);
    let mut frng = SubstreamRng::new(factor_seed, &[stream::FACTORS, factor_rep]);
    let factors = normal_matrix(&mut frng, t, r, &sd);
    let loadings = normal_matrix(&mut frng, n, r, &sd);
    let mut erng = SubstreamRng::new(config.seed, &[stream::ERRORS, replication]);
    let e_sd = libm::sqrt(config.sigma2_e);
    let errors = normal_matrix(&mut erng, t, n, &alloc::vec![e_sd; n]);
    let common = &factors * loadings.transpose();
    let panel = PanelMatrix::complete(&common + &errors)?;
    Ok(SimulatedPanel {
        panel,
        common,
        factors,
        loadings,
        errors,
        error_variances: DVector::from_element(n, config.sigma2_e),
    })
}

/// Strict factor model with a common coefficient of determination per series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrictFactorConfig {
    pub t: usize,
    pub n_star: usize,
    pub r: usize,
    pub r2: f64,
    pub sigma2_f: f64,
    pub sigma2_lambda: f64,
    pub seed: u64,
}

impl StrictFactorConfig {
    /// Defaults: five factors, `R^2 = 0.6`, unit loading variance and factor volatility
    /// 0.035 per period.
    pub fn new(t: usize, n_star: usize, seed: u64) -> Self {
        StrictFactorConfig {
            t,
            n_star,
            r: 5,
            r2: 0.6,
            sigma2_f: 0.035 * 0.035,
            sigma2_lambda: 1.0,
            seed,
        }
    }
}

/// Idiosyncratic variance giving series `i` the target `R^2`.
pub fn strict_error_variance(loading_row: &[f64], r2: f64, sigma2_f: f64) -> f64 {
    let ss: f64 = loading_row.iter().map(|l| l * l).sum();
    (1.0 - r2) / r2 * ss * sigma2_f
}

pub fn gen_strict_factor_dgp(config: &StrictFactorConfig, replication: u64) -> Result<SimulatedPanel> {
    let StrictFactorConfig { t, n_star: n, r, .. } = *config;
    if r == 0 || r > t.min(n) {
        return Err(Error::RankTooLarge { r, max: t.min(n) });
    }
    if !(config.r2 > 0.0 && config.r2 < 1.0) || !(config.sigma2_f > 0.0) || !(config.sigma2_lambda > 0.0) {
        return Err(Error::InvalidArgument("strict factor parameters out of range"));
    }
    let mut frng = SubstreamRng::new(config.seed, &[stream::FACTORS, replication]);
    let factors = normal_matrix(&mut frng, t, r, &alloc::vec![libm::sqrt(config.sigma2_f); r]);
    let loadings = normal_matrix(&mut frng, n, r, &alloc::vec![libm::sqrt(config.sigma2_lambda); r]);
    let error_variances = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let row: Vec<f64> = loadings.row(i).iter().copied().collect();
            strict_error_variance(&row, config.r2, config.sigma2_f)
        }),
    );
    let mut erng = SubstreamRng::new(config.seed, &[stream::ERRORS, replication]);
    let sds: Vec<f64> = error_variances.iter().map(|&v| libm::sqrt(v)).collect();
    let errors = normal_matrix(&mut erng, t, n, &sds);
    let common = &factors * loadings.transpose();
    let panel = PanelMatrix::complete(&common + &errors)?;
    Ok(SimulatedPanel {
        panel,
        common,
        factors,
        loadings,
        errors,
        error_variances,
    })
}

/// Missing block in the bottom-right corner: rows `t_o..T` of series `n_o..N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockCase {
    pub t_o: usize,
    pub n_o: usize,
    /// Stagger the block so later series lose fewer periods (see [`staircase_depths`]).
    pub staggered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MissingPattern {
    /// Staggered block over the last `round(row_frac T)` periods of the first
    /// `round(col_frac N)` series.
    SouthWestBlock { row_frac: f64, col_frac: f64 },
    FourBlockCase(BlockCase),
    /// Explicit mask, `true` = observed.
    CustomMask(DMatrix<bool>),
}

/// Missing depths of `m` staggered columns under a block of depth `depth`: column `k`
/// loses its last `round(depth (1 - 0.8 k / (m - 1)))` periods, so the average depth is
/// 60% of the block.
pub fn staircase_depths(depth: usize, m: usize) -> Vec<usize> {
    if m <= 1 {
        return alloc::vec![depth; m];
    }
    (0..m)
        .map(|k| libm::round(depth as f64 * (1.0 - 0.8 * k as f64 / (m - 1) as f64)) as usize)
        .collect()
}

fn round_frac(frac: f64, total: usize) -> usize {
    libm::round(frac * total as f64) as usize
}

/// Observed-entry mask of a pattern on a `t x n` panel.
pub fn missing_mask(t: usize, n: usize, pattern: &MissingPattern) -> Result<DMatrix<bool>> {
    let mut mask = DMatrix::from_element(t, n, true);
    match pattern {
        MissingPattern::SouthWestBlock { row_frac, col_frac } => {
            if !(0.0..1.0).contains(row_frac) || !(0.0..1.0).contains(col_frac) {
                return Err(Error::InvalidArgument("block fractions must lie in [0, 1)"));
            }
            let depth = round_frac(*row_frac, t);
            let m = round_frac(*col_frac, n);
            for (k, d) in staircase_depths(depth, m).into_iter().enumerate() {
                for s in t - d..t {
                    mask[(s, k)] = false;
                }
            }
        }
        MissingPattern::FourBlockCase(case) => {
            if case.t_o > t || case.n_o > n {
                return Err(Error::InvalidArgument("block corner outside the panel"));
            }
            let depth = t - case.t_o;
            let m = n - case.n_o;
            let depths = if case.staggered {
                staircase_depths(depth, m)
            } else {
                alloc::vec![depth; m]
            };
            for (k, d) in depths.into_iter().enumerate() {
                for s in t - d..t {
                    mask[(s, case.n_o + k)] = false;
                }
            }
        }
        MissingPattern::CustomMask(m) => {
            if m.shape() != (t, n) {
                return Err(Error::DimensionMismatch {
                    expected: (t, n),
                    found: m.shape(),
                });
            }
            mask = m.clone();
        }
    }
    let tall = (0..n).any(|i| mask.column(i).iter().all(|&v| v));
    let nonempty = (0..n).all(|i| mask.column(i).iter().any(|&v| v));
    if !tall || !nonempty {
        return Err(Error::PatternDegeneratesPanel);
    }
    Ok(mask)
}

/// Mask a panel; stored values are left untouched.
pub fn apply_missing(panel: &PanelMatrix, pattern: &MissingPattern) -> Result<PanelMatrix> {
    let pattern_mask = missing_mask(panel.t(), panel.n(), pattern)?;
    let combined = pattern_mask.zip_map(panel.mask(), |a, b| a && b);
    panel.with_mask(combined).map_err(|e| match e {
        Error::EmptySeries(_) => Error::PatternDegeneratesPanel,
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declining_variances() {
        assert_eq!(factor_variances(2), alloc::vec![1.0, 0.5]);
        assert_eq!(factor_variances(1), alloc::vec![1.0]);
        let v5 = factor_variances(5);
        assert!((v5[4] - 0.2).abs() < 1e-15);
        assert!((v5[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn fixed_factors_share_draws() {
        let mut cfg = BasicDgpConfig::new(20, 15, 2, 1.0, 9);
        cfg.fixed_factors = true;
        let a = gen_basic_dgp(&cfg, 0).unwrap();
        let b = gen_basic_dgp(&cfg, 1).unwrap();
        assert_eq!(a.common, b.common);
        assert_ne!(a.errors, b.errors);
        cfg.fixed_factors = false;
        let c = gen_basic_dgp(&cfg, 1).unwrap();
        assert_ne!(a.common, c.common);
    }

    #[test]
    fn noiseless_has_rank_r() {
        let cfg = BasicDgpConfig::new(30, 20, 3, 0.0, 1);
        let sim = gen_basic_dgp(&cfg, 0).unwrap();
        let sv = sim.panel.values().clone().singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sorted[3] < 1e-10 * sorted[0]);
        assert!(sorted[2] > 1e-3 * sorted[0]);
    }

    #[test]
    fn strict_error_variance_formula() {
        let cfg = StrictFactorConfig::new(50, 10, 3);
        let sim = gen_strict_factor_dgp(&cfg, 0).unwrap();
        for i in 0..10 {
            let row: Vec<f64> = sim.loadings.row(i).iter().copied().collect();
            let ss: f64 = row.iter().map(|l| l * l).sum();
            let expected = 0.4 / 0.6 * ss * 0.035 * 0.035;
            assert!((sim.error_variances[i] - expected).abs() < 1e-12 * expected.max(1e-300));
        }
    }

    #[test]
    fn southwest_block_share() {
        let mask = missing_mask(339, 100, &MissingPattern::SouthWestBlock { row_frac: 0.6, col_frac: 0.4 }).unwrap();
        let missing = mask.iter().filter(|&&m| !m).count() as f64 / (339.0 * 100.0);
        assert!((missing - 0.144).abs() < 0.001, "{missing}");
        assert!(mask.column(0).iter().filter(|&&m| !m).count() == 203);
        assert!(mask.column(40).iter().all(|&m| m));
    }

    #[test]
    fn zero_fraction_masks_nothing() {
        for (r, c) in [(0.0, 0.4), (0.6, 0.0)] {
            let mask = missing_mask(50, 20, &MissingPattern::SouthWestBlock { row_frac: r, col_frac: c }).unwrap();
            assert!(mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn block_case_geometry() {
        let case = BlockCase { t_o: 6, n_o: 3, staggered: false };
        let mask = missing_mask(10, 5, &MissingPattern::FourBlockCase(case)).unwrap();
        assert_eq!(mask.iter().filter(|&&m| !m).count(), 4 * 2);
        assert!(!mask[(6, 3)] && mask[(5, 3)] && mask[(9, 2)]);
        let stag = missing_mask(10, 5, &MissingPattern::FourBlockCase(BlockCase { staggered: true, ..case })).unwrap();
        assert_eq!(stag.column(3).iter().filter(|&&m| !m).count(), 4);
        assert_eq!(stag.column(4).iter().filter(|&&m| !m).count(), 1);
    }

    #[test]
    fn degenerate_patterns() {
        let all_incomplete = DMatrix::from_fn(4, 3, |t, _| t < 3);
        assert_eq!(
            missing_mask(4, 3, &MissingPattern::CustomMask(all_incomplete)).unwrap_err(),
            Error::PatternDegeneratesPanel
        );
        let empty_col = DMatrix::from_fn(4, 3, |_, i| i != 2);
        assert_eq!(
            missing_mask(4, 3, &MissingPattern::CustomMask(empty_col)).unwrap_err(),
            Error::PatternDegeneratesPanel
        );
    }

    #[test]
    fn apply_keeps_values() {
        let sim = gen_basic_dgp(&BasicDgpConfig::new(10, 6, 1, 1.0, 2), 0).unwrap();
        let p = apply_missing(&sim.panel, &MissingPattern::FourBlockCase(BlockCase { t_o: 7, n_o: 4, staggered: false })).unwrap();
        assert_eq!(p.values(), sim.panel.values());
        assert!(!p.is_observed(9, 5));
    }
}
