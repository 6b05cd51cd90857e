//! TALL-PROJECT, TALL-WIDE, one-pass re-estimation and EM imputation.

use nalgebra::{DMatrix, DVector};

use crate::apc::{apc, FactorModelFit};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, least_squares_multi};
use crate::panel::{
    build_locators, standardize, validate_for_imputation, LocatorSets, PanelMatrix,
    StandardizationRecord, TransformMode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Tp,
    Tw,
    TpPlus,
    TwPlus,
    Em,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tp => "TP",
            Method::Tw => "TW",
            Method::TpPlus => "TP+",
            Method::TwPlus => "TW+",
            Method::Em => "EM",
        }
    }

    pub fn is_first_pass(self) -> bool {
        matches!(self, Method::Tp | Method::Tw)
    }

    pub fn is_reestimated(self) -> bool {
        matches!(self, Method::TpPlus | Method::TwPlus)
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Relative Frobenius change of the common component at the last iteration.
    pub last_change: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Output of an imputation method, in the (possibly transformed) units it was run in.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationResult {
    pub fit: FactorModelFit,
    /// Common component `C = F Lambda'`.
    pub common: DMatrix<f64>,
    /// Observed values kept, missing cells replaced by the common component.
    pub completed: DMatrix<f64>,
    /// `completed - common`; exactly zero at missing cells.
    pub residuals: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub locators: LocatorSets,
    pub method: Method,
    pub transform: StandardizationRecord,
    pub em: Option<EmDiagnostics>,
}

impl ImputationResult {
    fn assemble(
        observed: &DMatrix<f64>,
        mask: &DMatrix<bool>,
        locators: LocatorSets,
        fit: FactorModelFit,
        method: Method,
        transform: StandardizationRecord,
    ) -> Self {
        let common = fit.common_component();
        let (t, n) = common.shape();
        let mut completed = common.clone();
        let mut residuals = DMatrix::zeros(t, n);
        for i in 0..n {
            for s in 0..t {
                if mask[(s, i)] {
                    let x = observed[(s, i)];
                    completed[(s, i)] = x;
                    residuals[(s, i)] = x - common[(s, i)];
                }
            }
        }
        ImputationResult {
            fit,
            common,
            completed,
            residuals,
            mask: mask.clone(),
            locators,
            method,
            transform,
            em: None,
        }
    }

    pub fn r(&self) -> usize {
        self.fit.r()
    }

    pub fn t(&self) -> usize {
        self.common.nrows()
    }

    pub fn n(&self) -> usize {
        self.common.ncols()
    }

    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    /// Common component in original units.
    pub fn restored_common(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.t(), self.n(), |t, i| {
            self.transform.restore(i, self.common[(t, i)])
        })
    }

    /// Completed panel in original units; observed cells are copied from `original`.
    pub fn restored_completed(&self, original: &PanelMatrix) -> Result<DMatrix<f64>> {
        if original.values().shape() != self.common.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.common.shape(),
                found: original.values().shape(),
            });
        }
        Ok(original.filled(&self.restored_common()))
    }

    pub fn with_transform(mut self, transform: StandardizationRecord) -> Self {
        self.transform = transform;
        self
    }
}

fn tall_fit(panel: &PanelMatrix, locators: &LocatorSets, r: usize) -> Result<FactorModelFit> {
    let tall = locators.tall_columns();
    if tall.len() < r || tall.is_empty() {
        return Err(Error::NoTallBlock {
            n_o: tall.len(),
            r,
        });
    }
    let x_tall = panel.values().select_columns(tall.iter());
    apc(&x_tall, r)
}

/// Regress each series' observed values on the matching rows of `factors`.
fn project_loadings(
    panel: &PanelMatrix,
    locators: &LocatorSets,
    factors: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r = factors.ncols();
    let mut loadings = DMatrix::zeros(panel.n(), r);
    for (i, rows) in locators.per_series.iter().enumerate() {
        let a = factors.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&s| panel.values()[(s, i)]));
        let b = least_squares(&a, &y).ok_or(Error::SingularDesign(i))?;
        loadings.row_mut(i).copy_from(&b.transpose());
    }
    Ok(loadings)
}

/// TALL-PROJECT: factors from the fully observed series, loadings by per-series projection.
pub fn tp_impute(panel: &PanelMatrix, r: usize) -> Result<ImputationResult> {
    if r == 0 {
        return Err(Error::ZeroRank);
    }
    let locators = build_locators(panel);
    validate_for_imputation(panel, &locators, r).into_result(r)?;
    let tall = tall_fit(panel, &locators, r)?;
    let loadings = project_loadings(panel, &locators, &tall.factors)?;
    let fit = FactorModelFit {
        factors: tall.factors,
        loadings,
        eigenvalues: tall.eigenvalues,
    };
    Ok(ImputationResult::assemble(
        panel.values(),
        panel.mask(),
        locators,
        fit,
        Method::Tp,
        StandardizationRecord::identity(panel.n()),
    ))
}

/// TALL-WIDE: factors from the tall block, loadings from the wide block rotated onto the
/// tall-block loadings by a no-intercept regression.
pub fn tw_impute(panel: &PanelMatrix, r: usize) -> Result<ImputationResult> {
    if r == 0 {
        return Err(Error::ZeroRank);
    }
    let locators = build_locators(panel);
    let tall_cols = locators.tall_columns();
    let tall = tall_fit(panel, &locators, r)?;
    let wide_rows = locators.wide_rows();
    if wide_rows.len() < r {
        return Err(Error::NoWideBlock {
            t_o: wide_rows.len(),
            r,
        });
    }
    let x_wide = panel.values().select_rows(wide_rows.iter());
    let wide = apc(&x_wide, r)?;
    let wide_tall = wide.loadings.select_rows(tall_cols.iter());
    let rotation =
        least_squares_multi(&wide_tall, &tall.loadings).ok_or(Error::RotationSingular)?;
    let loadings = &wide.loadings * rotation;
    let fit = FactorModelFit {
        factors: tall.factors,
        loadings,
        eigenvalues: tall.eigenvalues,
    };
    Ok(ImputationResult::assemble(
        panel.values(),
        panel.mask(),
        locators,
        fit,
        Method::Tw,
        StandardizationRecord::identity(panel.n()),
    ))
}

/// One principal-components pass on the completed panel of a first-pass result.
pub fn reestimate(first_pass: &ImputationResult) -> Result<ImputationResult> {
    let method = match first_pass.method {
        Method::Tp => Method::TpPlus,
        Method::Tw => Method::TwPlus,
        other => return Err(Error::MethodMismatch(other.name())),
    };
    let fit = apc(&first_pass.completed, first_pass.r())?;
    Ok(ImputationResult::assemble(
        &first_pass.completed,
        &first_pass.mask,
        first_pass.locators.clone(),
        fit,
        method,
        first_pass.transform.clone(),
    ))
}

/// EM: alternate principal components on the completed panel and refilling missing cells.
///
/// Starts from the tall-project estimate. Non-convergence is reported in `em`, not raised.
pub fn em_impute(panel: &PanelMatrix, r: usize, options: EmOptions) -> Result<ImputationResult> {
    if options.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1"));
    }
    let init = tp_impute(panel, r)?;
    let mut common = init.common;
    let mut filled = init.completed;
    let mut diagnostics = EmDiagnostics {
        iterations: 0,
        converged: false,
        last_change: f64::INFINITY,
    };
    let mut fit = init.fit;
    while diagnostics.iterations < options.max_iter {
        fit = apc(&filled, r)?;
        let next = fit.common_component();
        let base = common.norm();
        let diff = (&next - &common).norm();
        let change = if base > 0.0 { diff / base } else { diff };
        diagnostics.iterations += 1;
        diagnostics.last_change = change;
        filled = panel.filled(&next);
        common = next;
        if change < options.tol {
            diagnostics.converged = true;
            break;
        }
    }
    let mut out = ImputationResult::assemble(
        panel.values(),
        panel.mask(),
        init.locators,
        fit,
        Method::Em,
        StandardizationRecord::identity(panel.n()),
    );
    out.em = Some(diagnostics);
    Ok(out)
}

/// Transform, impute with `method` (running the first pass for `+` methods), and attach
/// the transform record so results can be mapped back.
pub fn impute(
    panel: &PanelMatrix,
    r: usize,
    method: Method,
    mode: TransformMode,
) -> Result<ImputationResult> {
    let (work, record) = standardize(panel, mode)?;
    let result = match method {
        Method::Tp => tp_impute(&work, r)?,
        Method::Tw => tw_impute(&work, r)?,
        Method::TpPlus => reestimate(&tp_impute(&work, r)?)?,
        Method::TwPlus => reestimate(&tw_impute(&work, r)?)?,
        Method::Em => em_impute(&work, r, EmOptions::default())?,
    };
    Ok(result.with_transform(record))
}
