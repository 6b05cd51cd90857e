//! Monte Carlo studies: imputation RMSE, sampling distributions of the interval
//! estimates, and covariance-based risk measures.
//!
//! Replications run in parallel on the current rayon pool and are collected in
//! replication order before aggregation, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use panelfill_core::rng::{stream, SubstreamRng};
use panelfill_core::{
    apc, apply_missing, build_locators, cc_interval, gen_basic_dgp, gen_strict_factor_dgp,
    normal::normal_quantile, overlay_cov, pairwise_cov, prediction_interval, reestimate, risk_report,
    sample_cov, sf_cov, sfa_cov, sm_cov, standardize, tp_impute, tw_impute, BasicDgpConfig, BlockCase,
    CovEstimate, CovMethod, EmOptions, Error as CoreError, Frequency, ImputationResult, Method,
    MissingPattern, OverlayConfig, OverlaySampler, PanelMatrix, RiskSettings, StrictFactorConfig,
    TransformMode, VarBenchmark,
};
use rand::RngCore;
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{AppError, AppResult};
use crate::fixtures;
use crate::io::{read_panel, CsvOptions};
use crate::report::{McReport, McRow, SCHEMA_VERSION};

type CoreResult<T> = Result<T, CoreError>;

/// Evaluation cell, stored zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPoint {
    pub label: String,
    pub t: usize,
    pub i: usize,
}

impl EvalPoint {
    /// Parse `label:t:i` with one-based `t` and `i`.
    pub fn parse(s: &str) -> AppResult<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || AppError::Config(format!("evaluation point {s:?} is not label:t:i"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let t: usize = parts[1].parse().map_err(|_| bad())?;
        let i: usize = parts[2].parse().map_err(|_| bad())?;
        if t == 0 || i == 0 {
            return Err(bad());
        }
        Ok(EvalPoint {
            label: parts[0].to_string(),
            t: t - 1,
            i: i - 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyMethod {
    /// Principal components on the panel before masking.
    Complete,
    Impute(Method),
}

impl StudyMethod {
    pub fn parse(s: &str) -> AppResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" | "apc" => Ok(StudyMethod::Complete),
            other => parse_method(other).map(StudyMethod::Impute),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StudyMethod::Complete => "COMPLETE",
            StudyMethod::Impute(m) => m.name(),
        }
    }
}

pub fn parse_method(s: &str) -> AppResult<Method> {
    match s.to_ascii_lowercase().as_str() {
        "tp" => Ok(Method::Tp),
        "tw" => Ok(Method::Tw),
        "tp+" => Ok(Method::TpPlus),
        "tw+" => Ok(Method::TwPlus),
        "em" => Ok(Method::Em),
        _ => Err(AppError::Usage(format!("unknown imputation method {s:?}"))),
    }
}

pub fn parse_mode(s: &str) -> AppResult<TransformMode> {
    match s.to_ascii_lowercase().as_str() {
        "standardize" | "0" => Ok(TransformMode::Standardize),
        "demean" | "1" => Ok(TransformMode::Demean),
        "raw" | "2" => Ok(TransformMode::Raw),
        _ => Err(AppError::Usage(format!("unknown transform {s:?}"))),
    }
}

/// Table label of a transform: (0) standardized, (1) demeaned, (2) raw.
pub fn mode_label(mode: TransformMode) -> &'static str {
    match mode {
        TransformMode::Standardize => "(0)",
        TransformMode::Demean => "(1)",
        TransformMode::Raw => "(2)",
    }
}

pub fn parse_frequency(s: &str) -> AppResult<Frequency> {
    match s.to_ascii_lowercase().as_str() {
        "daily" => Ok(Frequency::Daily),
        "weekly" => Ok(Frequency::Weekly),
        "monthly" => Ok(Frequency::Monthly),
        "quarterly" => Ok(Frequency::Quarterly),
        "annual" => Ok(Frequency::Annual),
        _ => Err(AppError::Usage(format!("unknown frequency {s:?}"))),
    }
}

/// Estimator scored by the risk study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskEstimator {
    Cov(CovMethod),
    /// Sample covariance of the complete (unmasked) panel.
    Sample,
}

impl RiskEstimator {
    pub fn parse(s: &str) -> AppResult<Self> {
        if s.eq_ignore_ascii_case("sample") {
            return Ok(RiskEstimator::Sample);
        }
        CovMethod::parse(&s.to_ascii_lowercase())
            .map(RiskEstimator::Cov)
            .ok_or_else(|| AppError::Usage(format!("unknown covariance estimator {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskEstimator::Cov(m) => m.name(),
            RiskEstimator::Sample => "sample",
        }
    }
}

/// Covariance estimate for `method` from a first-pass result, re-estimating when needed.
pub fn covariance_for(
    method: CovMethod,
    first: &ImputationResult,
    reestimated: Option<&ImputationResult>,
    panel: &PanelMatrix,
    draws: usize,
    seed: u64,
) -> CoreResult<CovEstimate> {
    let owned;
    let base = if method.uses_reestimate() {
        match reestimated {
            Some(r) => r,
            None => {
                owned = reestimate(first)?;
                &owned
            }
        }
    } else {
        first
    };
    match method {
        CovMethod::Sm0 | CovMethod::SmPlus0 => Ok(sm_cov(base)),
        CovMethod::Sf | CovMethod::SfPlus => Ok(sf_cov(base)),
        CovMethod::Sfa | CovMethod::SfaPlus => sfa_cov(base),
        CovMethod::Pairwise => pairwise_cov(panel),
        CovMethod::Sm(_) | CovMethod::SmPlus(_) => {
            let scheme = method.overlay_scheme().ok_or(CoreError::SchemeUnavailable)?;
            overlay_cov(base, OverlayConfig { scheme, draws, seed })
        }
    }
}

fn parse_pattern(cfg: &Config) -> AppResult<MissingPattern> {
    match cfg.get("pattern").unwrap_or("southwest") {
        "southwest" => Ok(MissingPattern::SouthWestBlock {
            row_frac: cfg.require("row_frac")?,
            col_frac: cfg.require("col_frac")?,
        }),
        "block" => Ok(MissingPattern::FourBlockCase(BlockCase {
            t_o: cfg.require("t_o")?,
            n_o: cfg.require("n_o")?,
            staggered: cfg.or("staggered", false)?,
        })),
        "mask" => {
            let path: String = cfg.require("mask_file")?;
            let p = read_panel(
                std::path::Path::new(&path),
                &CsvOptions {
                    na_tokens: Vec::new(),
                    ..CsvOptions::default()
                },
            )?;
            Ok(MissingPattern::CustomMask(p.panel.values().map(|v| v != 0.0)))
        }
        other => Err(AppError::Config(format!("unknown pattern {other:?}"))),
    }
}

fn basic_dgp(cfg: &Config, seed: u64) -> AppResult<BasicDgpConfig> {
    let mut dgp = BasicDgpConfig::new(
        cfg.require("t")?,
        cfg.require("n")?,
        cfg.require("r")?,
        cfg.require("sigma2_e")?,
        seed,
    );
    dgp.fixed_factors = cfg.or("fixed_factors", false)?;
    dgp.declining_factor_variance = cfg.or("declining_factor_variance", true)?;
    dgp.factor_seed = cfg.parsed("factor_seed")?;
    Ok(dgp)
}

fn points(cfg: &Config) -> AppResult<Vec<EvalPoint>> {
    let pts = cfg.list("points").iter().map(|s| EvalPoint::parse(s)).collect::<AppResult<Vec<_>>>()?;
    if pts.is_empty() {
        return Err(AppError::Config("no evaluation points".into()));
    }
    Ok(pts)
}

fn check_points(points: &[EvalPoint], t: usize, n: usize) -> AppResult<()> {
    for p in points {
        if p.t >= t || p.i >= n {
            return Err(AppError::Config(format!("evaluation point {} outside the {t} x {n} panel", p.label)));
        }
    }
    Ok(())
}

fn list_or<T>(cfg: &Config, key: &str, default: &[&str], parse: impl Fn(&str) -> AppResult<T>) -> AppResult<Vec<T>> {
    let items = cfg.list(key);
    if items.is_empty() {
        default.iter().map(|s| parse(s)).collect()
    } else {
        items.iter().map(|s| parse(s)).collect()
    }
}

/// Run `f` for every replication and keep the successes in replication order.
fn run_replications<T, F>(replications: usize, f: F) -> (Vec<T>, usize)
where
    T: Send,
    F: Fn(u64) -> CoreResult<T> + Sync + Send,
{
    let out: Vec<Option<T>> = (0..replications)
        .into_par_iter()
        .map(|rep| f(rep as u64).ok())
        .collect();
    let failed = out.iter().filter(|o| o.is_none()).count();
    (out.into_iter().flatten().collect(), failed)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile (type 7).
fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Bias and RMSE of errors; RMSE is formed as `sqrt(bias^2 + var)` so it never falls below
/// `|bias|`.
fn bias_rmse(errors: &[f64]) -> (f64, f64) {
    let b = mean(errors);
    let v = errors.iter().map(|e| (e - b) * (e - b)).sum::<f64>() / errors.len() as f64;
    (b, (b * b + v).sqrt())
}

#[derive(Clone, Debug)]
pub struct ImputationStudy {
    pub dgp: BasicDgpConfig,
    pub pattern: MissingPattern,
    pub methods: Vec<StudyMethod>,
    pub modes: Vec<TransformMode>,
    pub points: Vec<EvalPoint>,
    pub replications: usize,
}

impl ImputationStudy {
    /// Errors `C~_it - C_it` in original units, ordered method, mode, point.
    fn replication(&self, rep: u64) -> CoreResult<Vec<f64>> {
        let sim = gen_basic_dgp(&self.dgp, rep)?;
        let masked = apply_missing(&sim.panel, &self.pattern)?;
        let r = self.dgp.r;
        let mut per_mode: Vec<BTreeMap<&'static str, DMatrix<f64>>> = Vec::new();
        for &mode in &self.modes {
            let mut commons = BTreeMap::new();
            let (work, record) = standardize(&masked, mode)?;
            let mut first_tp: Option<ImputationResult> = None;
            for &m in &self.methods {
                let common = match m {
                    StudyMethod::Complete => {
                        let (full, rec) = standardize(&sim.panel, mode)?;
                        rec.restore_matrix(&apc(full.values(), r)?.common_component())?
                    }
                    StudyMethod::Impute(method) => {
                        let res = match method {
                            Method::Tp | Method::TpPlus => {
                                if first_tp.is_none() {
                                    first_tp = Some(tp_impute(&work, r)?);
                                }
                                let tp = first_tp.as_ref().unwrap();
                                if method == Method::Tp {
                                    tp.clone()
                                } else {
                                    reestimate(tp)?
                                }
                            }
                            Method::Tw => tw_impute(&work, r)?,
                            Method::TwPlus => reestimate(&tw_impute(&work, r)?)?,
                            Method::Em => panelfill_core::em_impute(&work, r, EmOptions::default())?,
                        };
                        record.restore_matrix(&res.common)?
                    }
                };
                commons.insert(m.name(), common);
            }
            per_mode.push(commons);
        }
        let mut errors = Vec::with_capacity(self.methods.len() * self.modes.len() * self.points.len());
        for m in &self.methods {
            for commons in &per_mode {
                let c = &commons[m.name()];
                for p in &self.points {
                    errors.push(c[(p.t, p.i)] - sim.common[(p.t, p.i)]);
                }
            }
        }
        Ok(errors)
    }

    pub fn run(&self) -> McReport {
        let (reps, failed) = run_replications(self.replications, |rep| self.replication(rep));
        let mut rows = Vec::new();
        let mut k = 0;
        for m in &self.methods {
            for &mode in &self.modes {
                for p in &self.points {
                    if !reps.is_empty() {
                        let errs: Vec<f64> = reps.iter().map(|e| e[k]).collect();
                        let (bias, rmse) = bias_rmse(&errs);
                        rows.push(McRow {
                            method: m.name().into(),
                            variant: Some(mode_label(mode).into()),
                            target: p.label.clone(),
                            count: errs.len(),
                            bias: Some(bias),
                            rmse: Some(rmse),
                            ..McRow::default()
                        });
                    }
                    k += 1;
                }
            }
        }
        report("imputation", self.replications, reps.len(), failed, rows)
    }
}

#[derive(Clone, Debug)]
pub struct DistributionStudy {
    pub dgp: BasicDgpConfig,
    pub pattern: MissingPattern,
    pub methods: Vec<StudyMethod>,
    pub points: Vec<EvalPoint>,
    pub level: f64,
    pub replications: usize,
}

#[derive(Clone, Copy, Debug)]
struct PointDraw {
    estimate: f64,
    truth: f64,
    se: f64,
    covered: bool,
    predicted: Option<bool>,
}

impl DistributionStudy {
    fn replication(&self, rep: u64) -> CoreResult<Vec<PointDraw>> {
        let sim = gen_basic_dgp(&self.dgp, rep)?;
        let masked = apply_missing(&sim.panel, &self.pattern)?;
        let r = self.dgp.r;
        let mut tp: Option<ImputationResult> = None;
        let mut tw: Option<ImputationResult> = None;
        let mut out = Vec::with_capacity(self.methods.len() * self.points.len());
        for &m in &self.methods {
            let res = match m {
                StudyMethod::Complete => tp_impute(&sim.panel, r)?,
                StudyMethod::Impute(Method::Tp) => tp.get_or_insert(tp_impute(&masked, r)?).clone(),
                StudyMethod::Impute(Method::Tw) => tw.get_or_insert(tw_impute(&masked, r)?).clone(),
                StudyMethod::Impute(Method::TpPlus) => {
                    if tp.is_none() {
                        tp = Some(tp_impute(&masked, r)?);
                    }
                    reestimate(tp.as_ref().unwrap())?
                }
                StudyMethod::Impute(Method::TwPlus) => {
                    if tw.is_none() {
                        tw = Some(tw_impute(&masked, r)?);
                    }
                    reestimate(tw.as_ref().unwrap())?
                }
                StudyMethod::Impute(Method::Em) => return Err(CoreError::MethodMismatch("EM")),
            };
            for p in &self.points {
                let ci = cc_interval(&res, p.i, p.t, self.level)?;
                let truth = sim.common[(p.t, p.i)];
                let predicted = if res.is_observed(p.t, p.i) {
                    None
                } else {
                    let pi = prediction_interval(&res, p.i, p.t, self.level)?;
                    Some(pi.contains(sim.panel.values()[(p.t, p.i)]))
                };
                out.push(PointDraw {
                    estimate: ci.center,
                    truth,
                    se: ci.se,
                    covered: ci.contains(truth),
                    predicted,
                });
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> McReport {
        let (reps, failed) = run_replications(self.replications, |rep| self.replication(rep));
        let mut rows = Vec::new();
        let mut k = 0;
        for m in &self.methods {
            for p in &self.points {
                if !reps.is_empty() {
                    let draws: Vec<PointDraw> = reps.iter().map(|d| d[k]).collect();
                    let est: Vec<f64> = draws.iter().map(|d| d.estimate).collect();
                    let errs: Vec<f64> = draws.iter().map(|d| d.estimate - d.truth).collect();
                    let stud: Vec<f64> = draws.iter().map(|d| (d.estimate - d.truth) / d.se).collect();
                    let share = |f: &dyn Fn(&PointDraw) -> bool| {
                        draws.iter().filter(|d| f(d)).count() as f64 / draws.len() as f64
                    };
                    let (bias, rmse) = bias_rmse(&errs);
                    let predicted: Vec<bool> = draws.iter().filter_map(|d| d.predicted).collect();
                    rows.push(McRow {
                        method: m.name().into(),
                        variant: None,
                        target: p.label.clone(),
                        count: draws.len(),
                        truth: Some(mean(&draws.iter().map(|d| d.truth).collect::<Vec<_>>())),
                        bias: Some(bias),
                        rmse: Some(rmse),
                        mean: Some(mean(&est)),
                        sd: Some(sd(&est)),
                        mean_ase: Some(mean(&draws.iter().map(|d| d.se).collect::<Vec<_>>())),
                        q05: Some(quantile(&stud, 0.05)),
                        q95: Some(quantile(&stud, 0.95)),
                        coverage: Some(share(&|d| d.covered)),
                        prediction_coverage: (!predicted.is_empty())
                            .then(|| predicted.iter().filter(|&&b| b).count() as f64 / predicted.len() as f64),
                        extra: BTreeMap::new(),
                    });
                }
                k += 1;
            }
        }
        report("distribution", self.replications, reps.len(), failed, rows)
    }
}

#[derive(Clone, Debug)]
pub enum RiskSource {
    /// Fresh strict-factor panel every replication.
    Strict(StrictFactorConfig),
    /// Fixed complete panel; each replication selects a random subset of its series.
    Panel(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct RiskStudy {
    pub source: RiskSource,
    pub n_select: usize,
    pub pattern: MissingPattern,
    pub r: usize,
    /// First-pass methods (TP and/or TW); `+` estimators re-estimate from them.
    pub imputations: Vec<Method>,
    pub estimators: Vec<RiskEstimator>,
    pub draws: usize,
    pub seed: u64,
    pub settings: RiskSettings,
    /// Record per-draw and averaged minimum eigenvalues of overlay estimators.
    pub rank_check: bool,
    pub replications: usize,
}

pub const RISK_MEASURES: [&str; 5] = ["pvol", "pvar", "call", "var", "cov"];

#[derive(Clone, Debug, Default)]
struct EstimatorDraw {
    errors: [Vec<f64>; 5],
    /// Largest per-draw minimum eigenvalue.
    draw_min_eig: Option<f64>,
    /// Minimum and maximum eigenvalue of the averaged estimate.
    avg_eig: Option<(f64, f64)>,
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    ev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

impl RiskStudy {
    fn subpanel(&self, rep: u64) -> CoreResult<DMatrix<f64>> {
        let full = match &self.source {
            RiskSource::Strict(cfg) => gen_strict_factor_dgp(cfg, rep)?.panel.values().clone(),
            RiskSource::Panel(m) => m.clone(),
        };
        let n = full.ncols();
        if self.n_select == 0 || self.n_select > n {
            return Err(CoreError::InvalidArgument("n_select exceeds the panel width"));
        }
        if self.n_select == n {
            return Ok(full);
        }
        let mut rng = SubstreamRng::new(self.seed, &[stream::SELECT, rep]);
        let mut cols = rand::seq::index::sample(&mut rng, n, self.n_select).into_vec();
        cols.sort_unstable();
        Ok(full.select_columns(cols.iter()))
    }

    fn replication(&self, rep: u64) -> CoreResult<Vec<Option<EstimatorDraw>>> {
        let truth = self.subpanel(rep)?;
        let complete = PanelMatrix::complete(truth.clone())?;
        let masked = apply_missing(&complete, &self.pattern)?;
        let incomplete = build_locators(&masked).incomplete_series();
        let overlay_seed = SubstreamRng::new(self.seed, &[stream::AUXILIARY, rep]).next_u64();
        let mut out = Vec::with_capacity(self.imputations.len() * self.estimators.len());
        for &imp in &self.imputations {
            let first = match imp {
                Method::Tp => tp_impute(&masked, self.r)?,
                Method::Tw => tw_impute(&masked, self.r)?,
                _ => return Err(CoreError::MethodMismatch(imp.name())),
            };
            let needs_plus = self
                .estimators
                .iter()
                .any(|e| matches!(e, RiskEstimator::Cov(m) if m.uses_reestimate()));
            let plus = if needs_plus { Some(reestimate(&first)?) } else { None };
            for &est in &self.estimators {
                out.push(self.score(est, &first, plus.as_ref(), &masked, &truth, &incomplete, overlay_seed).ok());
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn score(
        &self,
        est: RiskEstimator,
        first: &ImputationResult,
        plus: Option<&ImputationResult>,
        masked: &PanelMatrix,
        truth: &DMatrix<f64>,
        incomplete: &[usize],
        seed: u64,
    ) -> CoreResult<EstimatorDraw> {
        let mut draw = EstimatorDraw::default();
        let cov = match est {
            RiskEstimator::Sample => sample_cov(truth),
            RiskEstimator::Cov(m) => match (m.overlay_scheme(), self.rank_check) {
                (Some(scheme), true) => {
                    let base = if m.uses_reestimate() { plus.unwrap_or(first) } else { first };
                    let sampler = OverlaySampler::new(base, OverlayConfig { scheme, draws: self.draws, seed })?;
                    let mut worst = f64::NEG_INFINITY;
                    let draws: Vec<DMatrix<f64>> = (0..self.draws)
                        .map(|s| {
                            let c = sampler.draw_cov(s);
                            worst = worst.max(eigen_range(&c).0);
                            c
                        })
                        .collect();
                    let avg = sampler.average(draws);
                    draw.draw_min_eig = Some(worst);
                    draw.avg_eig = Some(eigen_range(&avg.matrix));
                    avg
                }
                _ => covariance_for(m, first, plus, masked, self.draws, seed)?,
            },
        };
        let cmp = risk_report(&cov, truth, incomplete, &self.settings)?;
        let (e, t) = (&cmp.estimate, &cmp.truth);
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        draw.errors = [
            vec![e.pvol - t.pvol],
            vec![e.pvar - t.pvar],
            diff(&e.call_prices, &t.call_prices),
            diff(&e.variances, &t.variances),
            diff(&e.covariances, &t.covariances),
        ];
        Ok(draw)
    }

    pub fn run(&self) -> McReport {
        let (reps, failed) = run_replications(self.replications, |rep| self.replication(rep));
        let mut rows = Vec::new();
        let mut k = 0;
        for &imp in &self.imputations {
            for &est in &self.estimators {
                let draws: Vec<&EstimatorDraw> = reps.iter().filter_map(|r| r[k].as_ref()).collect();
                k += 1;
                if draws.is_empty() {
                    continue;
                }
                let est_failed = reps.len() - draws.len();
                for (m, name) in RISK_MEASURES.iter().enumerate() {
                    let errs: Vec<f64> = draws.iter().flat_map(|d| d.errors[m].iter().copied()).collect();
                    if errs.is_empty() {
                        continue;
                    }
                    let (bias, rmse) = bias_rmse(&errs);
                    let mut extra = BTreeMap::new();
                    if est_failed > 0 {
                        extra.insert("failed_replications".to_string(), est_failed as f64);
                    }
                    rows.push(McRow {
                        method: est.name().into(),
                        variant: Some(imp.name().into()),
                        target: name.to_string(),
                        count: errs.len(),
                        bias: Some(bias),
                        rmse: Some(rmse),
                        extra,
                        ..McRow::default()
                    });
                }
                let ranks: Vec<(f64, (f64, f64))> =
                    draws.iter().filter_map(|d| Some((d.draw_min_eig?, d.avg_eig?))).collect();
                if !ranks.is_empty() {
                    let mut extra = BTreeMap::new();
                    extra.insert(
                        "max_draw_min_eig".to_string(),
                        ranks.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
                    );
                    extra.insert(
                        "min_avg_min_eig".to_string(),
                        ranks.iter().map(|r| r.1 .0).fold(f64::INFINITY, f64::min),
                    );
                    extra.insert(
                        "min_avg_eig_ratio".to_string(),
                        ranks.iter().map(|r| r.1 .0 / r.1 .1).fold(f64::INFINITY, f64::min),
                    );
                    extra.insert(
                        "pd_share".to_string(),
                        ranks.iter().filter(|r| r.1 .0 > 0.0).count() as f64 / ranks.len() as f64,
                    );
                    rows.push(McRow {
                        method: est.name().into(),
                        variant: Some(imp.name().into()),
                        target: "rank".into(),
                        count: ranks.len(),
                        extra,
                        ..McRow::default()
                    });
                }
            }
        }
        report("risk", self.replications, reps.len(), failed, rows)
    }
}

fn report(study: &str, replications: usize, effective: usize, failed: usize, rows: Vec<McRow>) -> McReport {
    McReport {
        schema: SCHEMA_VERSION,
        study: study.into(),
        replications,
        effective,
        failed,
        wall_clock_secs: None,
        config: BTreeMap::new(),
        rows,
    }
}

#[derive(Clone, Debug)]
pub enum Study {
    Imputation(ImputationStudy),
    Distribution(DistributionStudy),
    Risk(RiskStudy),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Overrides the configured replication count.
    pub replications: Option<usize>,
    /// Use `full_replications` from the configuration.
    pub full_scale: bool,
    pub record_timing: bool,
}

impl Study {
    pub fn from_config(cfg: &Config, opts: &RunOptions) -> AppResult<Self> {
        let replications = match opts.replications {
            Some(b) => b,
            None if opts.full_scale => cfg
                .parsed("full_replications")?
                .map_or_else(|| cfg.require("replications"), Ok)?,
            None => cfg.require("replications")?,
        };
        if replications == 0 {
            return Err(AppError::Usage("replication count must be at least 1".into()));
        }
        let seed = opts.seed;
        let study: String = cfg.require("study")?;
        match study.as_str() {
            "imputation" => {
                let dgp = basic_dgp(cfg, seed)?;
                let points = points(cfg)?;
                check_points(&points, dgp.t, dgp.n)?;
                Ok(Study::Imputation(ImputationStudy {
                    dgp,
                    pattern: parse_pattern(cfg)?,
                    methods: list_or(cfg, "methods", &["complete", "tp", "tp+", "em"], StudyMethod::parse)?,
                    modes: list_or(cfg, "modes", &["standardize"], parse_mode)?,
                    points,
                    replications,
                }))
            }
            "distribution" => {
                let dgp = basic_dgp(cfg, seed)?;
                let points = points(cfg)?;
                check_points(&points, dgp.t, dgp.n)?;
                let methods = list_or(cfg, "methods", &["complete", "tw", "tw+", "tp", "tp+"], StudyMethod::parse)?;
                if methods.contains(&StudyMethod::Impute(Method::Em)) {
                    return Err(AppError::Config("EM has no interval estimate".into()));
                }
                let level: f64 = cfg.or("level", 0.95)?;
                if !(level > 0.0 && level < 1.0) {
                    return Err(AppError::Config("level must lie in (0, 1)".into()));
                }
                Ok(Study::Distribution(DistributionStudy {
                    dgp,
                    pattern: parse_pattern(cfg)?,
                    methods,
                    points,
                    level,
                    replications,
                }))
            }
            "risk" => {
                let source = match cfg.get("source").unwrap_or("strict") {
                    "strict" => {
                        let mut sc = StrictFactorConfig::new(cfg.require("t")?, cfg.require("n_star")?, seed);
                        sc.r = cfg.or("r", sc.r)?;
                        sc.r2 = cfg.or("r2", sc.r2)?;
                        sc.sigma2_f = cfg.or("sigma2_f", sc.sigma2_f)?;
                        sc.sigma2_lambda = cfg.or("sigma2_lambda", sc.sigma2_lambda)?;
                        RiskSource::Strict(sc)
                    }
                    "synthetic" => RiskSource::Panel(fixtures::synthetic_calibrated_panel(
                        fixtures::CALIBRATED_T,
                        fixtures::CALIBRATED_N,
                        cfg.or("panel_seed", fixtures::CALIBRATED_SEED)?,
                    )),
                    "panel" => {
                        let path: String = cfg.require("panel_file")?;
                        let p = read_panel(std::path::Path::new(&path), &CsvOptions::default())?;
                        if !p.panel.is_complete() {
                            return Err(AppError::Data(format!("{path}: panel must be complete")));
                        }
                        RiskSource::Panel(p.panel.values().clone())
                    }
                    other => return Err(AppError::Config(format!("unknown source {other:?}"))),
                };
                let r: usize = cfg.or("r", 5)?;
                let n_select = match &source {
                    RiskSource::Strict(sc) => cfg.or("n_select", sc.n_star)?,
                    RiskSource::Panel(m) => cfg.or("n_select", m.ncols())?,
                };
                let settings = RiskSettings {
                    alpha: cfg.or("alpha", 0.95)?,
                    frequency: parse_frequency(cfg.get("frequency").unwrap_or("monthly"))?,
                    units_scale: cfg.or("units_scale", 1.0)?,
                    var_benchmark: match cfg.get("var_benchmark").unwrap_or("gaussian") {
                        "gaussian" => VarBenchmark::Gaussian,
                        "empirical" => VarBenchmark::Empirical,
                        other => return Err(AppError::Config(format!("unknown var_benchmark {other:?}"))),
                    },
                    ..RiskSettings::default()
                };
                let imputations = list_or(cfg, "imputations", &["tp"], parse_method)?;
                if imputations.iter().any(|m| !m.is_first_pass()) {
                    return Err(AppError::Config("imputations must be tp or tw".into()));
                }
                Ok(Study::Risk(RiskStudy {
                    source,
                    n_select,
                    pattern: parse_pattern(cfg)?,
                    r,
                    imputations,
                    estimators: list_or(cfg, "estimators", &["sm0", "sm+2"], RiskEstimator::parse)?,
                    draws: cfg.or("draws", 100)?,
                    seed,
                    settings,
                    rank_check: cfg.or("rank_check", false)?,
                    replications,
                }))
            }
            other => Err(AppError::Config(format!("unknown study {other:?}"))),
        }
    }

    pub fn run(&self) -> McReport {
        match self {
            Study::Imputation(s) => s.run(),
            Study::Distribution(s) => s.run(),
            Study::Risk(s) => s.run(),
        }
    }
}

/// Build and run the study described by `cfg`, echoing the configuration in the report.
pub fn run_config(cfg: &Config, opts: &RunOptions) -> AppResult<McReport> {
    let study = Study::from_config(cfg, opts)?;
    let start = Instant::now();
    let mut report = study.run();
    if opts.record_timing {
        report.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    }
    report.config = cfg.entries().clone();
    report.config.insert("seed".into(), opts.seed.to_string());
    report.config.insert("replications".into(), report.replications.to_string());
    Ok(report)
}

/// Two-sided normal critical value for `level`.
pub fn critical_value(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_point_is_one_based() {
        let p = EvalPoint::parse("miss:160:145").unwrap();
        assert_eq!((p.t, p.i), (159, 144));
        assert!(EvalPoint::parse("x:0:1").is_err());
        assert!(EvalPoint::parse("x:1").is_err());
    }

    #[test]
    fn quantile_type7() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&xs, 0.05) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn rmse_dominates_bias() {
        let (b, r) = bias_rmse(&[0.1, 0.1, 0.1]);
        assert!(r >= b.abs());
        let (b, r) = bias_rmse(&[1.0, -3.0]);
        assert_eq!(b, -1.0);
        assert!((r - 5.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn noiseless_imputation_study_is_exact() {
        let mut cfg = Config::preset("table1-case1").unwrap();
        cfg.set("sigma2_e", "0");
        cfg.set("modes", "raw");
        cfg.set("t", "60");
        cfg.set("n", "60");
        cfg.set("t_o", "30");
        cfg.set("n_o", "30");
        cfg.set("points", "bal:25:20, tall:50:20, wide:25:40, miss:55:35");
        let report = run_config(
            &cfg,
            &RunOptions {
                seed: 3,
                replications: Some(3),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(report.failed, 0);
        for row in &report.rows {
            assert!(row.rmse.unwrap() < 1e-6, "{row:?}");
        }
    }
}
