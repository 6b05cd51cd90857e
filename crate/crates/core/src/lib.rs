//! Factor-model imputation for incomplete `T x N` panels.
//!
//! Estimates the common component of an approximate factor model from the fully observed
//! series (tall block), imputes missing entries, attaches asymptotic confidence and
//! prediction intervals, and builds full-rank covariance estimates by overlaying
//! resampled residuals on imputed cells.
//!
//! The crate is `no_std` and needs only `alloc`.
#![no_std]

extern crate alloc;

pub mod apc;
pub mod covariance;
pub mod dgp;
mod error;
pub mod favar;
pub mod impute;
pub mod inference;
pub mod linalg;
pub mod normal;
pub mod panel;
pub mod risk;
pub mod rng;

pub use apc::{apc, common_component, FactorModelFit};
pub use covariance::{
    min_eigenvalue, overlay_cov, pairwise_cov, sample_cov, sample_cov_matrix, sf_cov, sfa_cov,
    sm_cov, CovEstimate, CovMethod, OverlayConfig, OverlaySampler, OverlayScheme,
};
pub use dgp::{
    apply_missing, gen_basic_dgp, gen_strict_factor_dgp, missing_mask, BasicDgpConfig, BlockCase,
    MissingPattern, SimulatedPanel, StrictFactorConfig,
};
pub use error::{Error, Result};
pub use favar::{favar_fit, favar_fit_factors, FavarFit};
pub use impute::{
    em_impute, impute, reestimate, tp_impute, tw_impute, EmDiagnostics, EmOptions,
    ImputationResult, Method,
};
pub use inference::{
    cc_interval, cc_interval_first_pass, cc_interval_reestimated, prediction_interval,
    InferenceComponents, IntervalEstimate, IntervalKind,
};
pub use panel::{
    build_locators, destandardize, standardize, validate_for_imputation, LocatorSets,
    PanelMatrix, StandardizationRecord, TransformMode, ValidationFailure, ValidationReport,
};
pub use risk::{
    black_scholes_call, min_variance_weights, portfolio_volatility_model,
    portfolio_volatility_realized, risk_report, value_at_risk, Frequency, OptionTerms,
    RiskComparison, RiskReport, RiskSettings, VarBenchmark,
};
