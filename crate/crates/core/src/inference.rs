//! Asymptotic confidence intervals for the common component and prediction intervals
//! for missing entries.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::impute::{ImputationResult, Method};
use crate::linalg::spd_inverse;
use crate::normal::normal_quantile;
use crate::panel::StandardizationRecord;

trait Square {
    fn sq(self) -> f64;
}

impl Square for f64 {
    #[inline]
    fn sq(self) -> f64 {
        self * self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalKind {
    /// Interval for the common component `C_it`.
    Confidence,
    /// Interval for the missing value `X_it`.
    Prediction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalEstimate {
    pub center: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub kind: IntervalKind,
}

impl IntervalEstimate {
    pub fn new(center: f64, se: f64, level: f64, kind: IntervalKind) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument("level must lie in (0, 1)"));
        }
        let z = normal_quantile(0.5 * (1.0 + level));
        Ok(IntervalEstimate {
            center,
            se,
            lower: center - z * se,
            upper: center + z * se,
            level,
            kind,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// Same interval in the original units of series `i`.
    pub fn restored(&self, record: &StandardizationRecord, i: usize) -> Self {
        let scale = record.scale(i);
        IntervalEstimate {
            center: record.restore(i, self.center),
            se: self.se * scale,
            lower: record.restore(i, self.lower),
            upper: record.restore(i, self.upper),
            level: self.level,
            kind: self.kind,
        }
    }
}

/// Sum of `w_k * x_k x_k'` over the rows `x_k` of `m` listed in `idx`.
fn weighted_outer(m: &DMatrix<f64>, idx: &[usize], weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let r = m.ncols();
    let mut acc = DMatrix::zeros(r, r);
    for &k in idx {
        let w = weight(k);
        if w == 0.0 {
            continue;
        }
        for a in 0..r {
            let xa = m[(k, a)] * w;
            for b in 0..r {
                acc[(a, b)] += xa * m[(k, b)];
            }
        }
    }
    acc
}

fn check_cell(result: &ImputationResult, i: usize, t: usize) -> Result<()> {
    if i >= result.n() || t >= result.t() {
        return Err(Error::IndexOutOfRange { i, t });
    }
    Ok(())
}

/// Idiosyncratic variance per series over observed residuals, `(1/T_oi) sum e^2`.
pub fn sigma2_e(result: &ImputationResult) -> DVector<f64> {
    DVector::from_iterator(
        result.n(),
        result.locators.per_series.iter().enumerate().map(|(i, rows)| {
            let ss: f64 = rows.iter().map(|&s| result.residuals[(s, i)].sq()).sum();
            ss / rows.len() as f64
        }),
    )
}

/// Time-series pieces for series `i`: inverse of `F_oi'F_oi / T_oi` and the robust score
/// variance `(1/T_oi) sum F_s F_s' e_is^2`.
fn time_moments(result: &ImputationResult, i: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rows = &result.locators.per_series[i];
    let count = rows.len() as f64;
    let f = &result.fit.factors;
    let moment = weighted_outer(f, rows, |_| 1.0) / count;
    let phi = weighted_outer(f, rows, |s| result.residuals[(s, i)].sq()) / count;
    Ok((spd_inverse(&moment).ok_or(Error::SingularMoment)?, phi))
}

/// Cross-section pieces used by the first pass at period `t`.
struct FirstPassCross {
    tall: Vec<usize>,
    moment_inv: DMatrix<f64>,
}

impl FirstPassCross {
    fn new(result: &ImputationResult) -> Result<Self> {
        let tall = result.locators.tall_columns();
        if tall.is_empty() {
            return Err(Error::NoTallBlock { n_o: 0, r: result.r() });
        }
        let moment = weighted_outer(&result.fit.loadings, &tall, |_| 1.0) / tall.len() as f64;
        Ok(FirstPassCross {
            moment_inv: spd_inverse(&moment).ok_or(Error::SingularMoment)?,
            tall,
        })
    }

    fn gamma(&self, result: &ImputationResult, t: usize) -> DMatrix<f64> {
        weighted_outer(&result.fit.loadings, &self.tall, |k| {
            result.residuals[(t, k)].sq()
        }) / self.tall.len() as f64
    }
}

/// Cross-section pieces used after re-estimation.
struct ReestimatedCross {
    tall: Vec<usize>,
    is_tall: Vec<bool>,
    moment_inv: DMatrix<f64>,
    tall_sum_inv: DMatrix<f64>,
    all_sum: DMatrix<f64>,
}

impl ReestimatedCross {
    fn new(result: &ImputationResult) -> Result<Self> {
        let n = result.n();
        let lambda = &result.fit.loadings;
        let tall = result.locators.tall_columns();
        if tall.is_empty() {
            return Err(Error::NoTallBlock { n_o: 0, r: result.r() });
        }
        let mut is_tall = alloc::vec![false; n];
        for &k in &tall {
            is_tall[k] = true;
        }
        let all: Vec<usize> = (0..n).collect();
        let all_sum = weighted_outer(lambda, &all, |_| 1.0);
        let tall_sum = weighted_outer(lambda, &tall, |_| 1.0);
        Ok(ReestimatedCross {
            moment_inv: spd_inverse(&(&all_sum / n as f64)).ok_or(Error::SingularMoment)?,
            tall_sum_inv: spd_inverse(&tall_sum).ok_or(Error::SingularMoment)?,
            all_sum,
            tall,
            is_tall,
        })
    }

    /// Inflation applied to tall-block scores at period `t`, and the scalar used for the
    /// other observed series.
    fn inflation(&self, result: &ImputationResult, t: usize) -> (DMatrix<f64>, f64) {
        let n = result.n();
        let observed = &result.locators.per_time[t];
        let share = observed.len() as f64 / n as f64;
        let r = result.r();
        if observed.len() == n {
            return (DMatrix::identity(r, r), 1.0);
        }
        let inside = weighted_outer(&result.fit.loadings, observed, |_| 1.0);
        let outside = &self.all_sum - inside;
        let b = (DMatrix::identity(r, r) + outside * &self.tall_sum_inv) * share;
        (b, share)
    }

    fn gamma(&self, result: &ImputationResult, t: usize) -> DMatrix<f64> {
        let lambda = &result.fit.loadings;
        let observed = &result.locators.per_time[t];
        let (b, share) = self.inflation(result, t);
        let e2 = |k: usize| result.residuals[(t, k)].sq();
        let tall_part = weighted_outer(lambda, &self.tall, e2);
        let others: Vec<usize> = observed.iter().copied().filter(|&k| !self.is_tall[k]).collect();
        let other_part = weighted_outer(lambda, &others, e2);
        (&b * tall_part * b.transpose() + other_part * (share * share)) / observed.len() as f64
    }
}

fn quad(v: &DVector<f64>, inv: &DMatrix<f64>, mid: &DMatrix<f64>) -> f64 {
    let w = inv * v;
    (w.transpose() * mid * w)[(0, 0)]
}

fn combine(cross: f64, n_count: usize, time: f64, t_count: usize) -> f64 {
    let v = cross / n_count as f64 + time / t_count as f64;
    libm::sqrt(v.max(0.0))
}

/// Confidence interval for `C_it` from a first-pass (TP or TW) result.
pub fn cc_interval_first_pass(
    result: &ImputationResult,
    i: usize,
    t: usize,
    level: f64,
) -> Result<IntervalEstimate> {
    if !result.method.is_first_pass() {
        return Err(Error::MethodMismatch(result.method.name()));
    }
    check_cell(result, i, t)?;
    let cross = FirstPassCross::new(result)?;
    let (f_inv, phi) = time_moments(result, i)?;
    let lambda_i = result.fit.loadings.row(i).transpose();
    let f_t = result.fit.factors.row(t).transpose();
    let se = combine(
        quad(&lambda_i, &cross.moment_inv, &cross.gamma(result, t)),
        cross.tall.len(),
        quad(&f_t, &f_inv, &phi),
        result.locators.t_oi[i],
    );
    IntervalEstimate::new(result.common[(t, i)], se, level, IntervalKind::Confidence)
}

/// Confidence interval for `C_it` from a re-estimated (TP+ or TW+) result.
pub fn cc_interval_reestimated(
    result: &ImputationResult,
    i: usize,
    t: usize,
    level: f64,
) -> Result<IntervalEstimate> {
    if !result.method.is_reestimated() {
        return Err(Error::MethodMismatch(result.method.name()));
    }
    check_cell(result, i, t)?;
    let cross = ReestimatedCross::new(result)?;
    let (f_inv, phi) = time_moments(result, i)?;
    let lambda_i = result.fit.loadings.row(i).transpose();
    let f_t = result.fit.factors.row(t).transpose();
    let se = combine(
        quad(&lambda_i, &cross.moment_inv, &cross.gamma(result, t)),
        result.locators.n_ot[t],
        quad(&f_t, &f_inv, &phi),
        result.locators.t_oi[i],
    );
    IntervalEstimate::new(result.common[(t, i)], se, level, IntervalKind::Confidence)
}

/// Dispatch on the result's method.
pub fn cc_interval(
    result: &ImputationResult,
    i: usize,
    t: usize,
    level: f64,
) -> Result<IntervalEstimate> {
    match result.method {
        Method::Tp | Method::Tw => cc_interval_first_pass(result, i, t, level),
        Method::TpPlus | Method::TwPlus => cc_interval_reestimated(result, i, t, level),
        Method::Em => Err(Error::MethodMismatch(Method::Em.name())),
    }
}

/// Prediction interval for a missing `X_it`.
pub fn prediction_interval(
    result: &ImputationResult,
    i: usize,
    t: usize,
    level: f64,
) -> Result<IntervalEstimate> {
    check_cell(result, i, t)?;
    if result.is_observed(t, i) {
        return Err(Error::CellObserved { i, t });
    }
    let ci = cc_interval(result, i, t, level)?;
    let rows = &result.locators.per_series[i];
    let s2: f64 = rows.iter().map(|&s| result.residuals[(s, i)].sq()).sum::<f64>()
        / rows.len() as f64;
    let se = libm::sqrt(s2 + ci.se * ci.se);
    IntervalEstimate::new(ci.center, se, level, IntervalKind::Prediction)
}

/// Precomputed moments for standard errors at every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceComponents {
    pub method: Method,
    /// Inverse of the cross-section loading moment.
    pub lambda_moment_inv: DMatrix<f64>,
    /// Cross-section score variance per period (re-estimated form for `+` methods).
    pub gamma: Vec<DMatrix<f64>>,
    /// Inverse of `F_oi'F_oi / T_oi` per series.
    pub factor_moment_inv: Vec<DMatrix<f64>>,
    /// Time-series score variance per series.
    pub phi: Vec<DMatrix<f64>>,
    /// Cross-section count per period (`N_o` or `N_ot`).
    pub cross_section_counts: Vec<usize>,
    pub sigma2_e: DVector<f64>,
}

impl InferenceComponents {
    pub fn new(result: &ImputationResult) -> Result<Self> {
        let tt = result.t();
        let (lambda_moment_inv, gamma, cross_section_counts) = match result.method {
            Method::Tp | Method::Tw => {
                let c = FirstPassCross::new(result)?;
                let g = (0..tt).map(|t| c.gamma(result, t)).collect();
                (c.moment_inv.clone(), g, alloc::vec![c.tall.len(); tt])
            }
            Method::TpPlus | Method::TwPlus => {
                let c = ReestimatedCross::new(result)?;
                let g = (0..tt).map(|t| c.gamma(result, t)).collect();
                (c.moment_inv.clone(), g, result.locators.n_ot.clone())
            }
            Method::Em => return Err(Error::MethodMismatch(Method::Em.name())),
        };
        let mut factor_moment_inv = Vec::with_capacity(result.n());
        let mut phi = Vec::with_capacity(result.n());
        for i in 0..result.n() {
            let (a, b) = time_moments(result, i)?;
            factor_moment_inv.push(a);
            phi.push(b);
        }
        Ok(InferenceComponents {
            method: result.method,
            lambda_moment_inv,
            gamma,
            factor_moment_inv,
            phi,
            cross_section_counts,
            sigma2_e: sigma2_e(result),
        })
    }

    /// Standard error of `C_it` (transformed units).
    pub fn se(&self, result: &ImputationResult, i: usize, t: usize) -> f64 {
        let lambda_i = result.fit.loadings.row(i).transpose();
        let f_t = result.fit.factors.row(t).transpose();
        combine(
            quad(&lambda_i, &self.lambda_moment_inv, &self.gamma[t]),
            self.cross_section_counts[t],
            quad(&f_t, &self.factor_moment_inv[i], &self.phi[i]),
            result.locators.t_oi[i],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::{reestimate, tp_impute};
    use crate::panel::PanelMatrix;
    use crate::rng::SubstreamRng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn panel(noise: f64) -> PanelMatrix {
        let mut rng = SubstreamRng::new(42, &[]);
        let (t, n) = (40, 30);
        let f = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &f * l.transpose()
            + DMatrix::from_fn(t, n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
        let mask = DMatrix::from_fn(t, n, |s, i| !(s >= 28 && i >= 18));
        PanelMatrix::new(x, mask).unwrap()
    }

    #[test]
    fn interval_width_matches_quantile() {
        let ci = IntervalEstimate::new(1.0, 0.5, 0.95, IntervalKind::Confidence).unwrap();
        assert!((ci.upper - ci.lower - 2.0 * 1.959963984540054 * 0.5).abs() < 1e-12);
        assert!(IntervalEstimate::new(0.0, 1.0, 1.0, IntervalKind::Confidence).is_err());
    }

    #[test]
    fn noiseless_intervals_collapse() {
        let p = panel(0.0);
        let first = tp_impute(&p, 2).unwrap();
        let plus = reestimate(&first).unwrap();
        for res in [&first, &plus] {
            let ci = cc_interval(res, 25, 35, 0.95).unwrap();
            assert!(ci.se < 1e-10);
            let pi = prediction_interval(res, 25, 35, 0.95).unwrap();
            assert!((pi.se - ci.se).abs() < 1e-10);
        }
    }

    #[test]
    fn prediction_wider_than_confidence() {
        let p = panel(1.0);
        let plus = reestimate(&tp_impute(&p, 2).unwrap()).unwrap();
        for (i, t) in [(20, 30), (29, 39), (25, 28)] {
            let ci = cc_interval(&plus, i, t, 0.9).unwrap();
            let pi = prediction_interval(&plus, i, t, 0.9).unwrap();
            assert!(pi.se >= ci.se);
            assert_eq!(pi.kind, IntervalKind::Prediction);
        }
        assert_eq!(
            prediction_interval(&plus, 0, 0, 0.9).unwrap_err(),
            Error::CellObserved { i: 0, t: 0 }
        );
    }

    #[test]
    fn components_agree_with_direct_intervals() {
        let p = panel(1.0);
        let first = tp_impute(&p, 2).unwrap();
        let plus = reestimate(&first).unwrap();
        for res in [&first, &plus] {
            let comp = InferenceComponents::new(res).unwrap();
            for (i, t) in [(3, 4), (20, 30), (29, 39)] {
                let direct = cc_interval(res, i, t, 0.95).unwrap().se;
                assert!((comp.se(res, i, t) - direct).abs() < 1e-14);
            }
            for g in &comp.gamma {
                assert!((g - g.transpose()).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn method_mismatch() {
        let p = panel(1.0);
        let first = tp_impute(&p, 2).unwrap();
        assert!(matches!(
            cc_interval_reestimated(&first, 0, 0, 0.95),
            Err(Error::MethodMismatch("TP"))
        ));
    }
}
