//! Incomplete panels, locator sets and per-series standardization.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A `T x N` panel with an observed-entry mask (`true` = observed).
///
/// Values at unobserved cells are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl PanelMatrix {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::DimensionMismatch {
                expected: values.shape(),
                found: mask.shape(),
            });
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument("panel must have T >= 1 and N >= 1"));
        }
        for i in 0..mask.ncols() {
            if !mask.column(i).iter().any(|&m| m) {
                return Err(Error::EmptySeries(i));
            }
        }
        for (v, &m) in values.iter().zip(mask.iter()) {
            if m && !v.is_finite() {
                return Err(Error::InvalidArgument("observed entries must be finite"));
            }
        }
        Ok(PanelMatrix { values, mask })
    }

    /// Fully observed panel.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    /// Same values under a different mask.
    pub fn with_mask(&self, mask: DMatrix<bool>) -> Result<Self> {
        Self::new(self.values.clone(), mask)
    }

    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    /// Observed value at `(t, i)`.
    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        if self.mask[(t, i)] {
            Some(self.values[(t, i)])
        } else {
            None
        }
    }

    /// Raw storage, including sentinel cells; callers must respect the mask.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Values with unobserved cells replaced by `fill`.
    pub fn filled(&self, fill: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.t(), self.n(), |t, i| {
            if self.mask[(t, i)] {
                self.values[(t, i)]
            } else {
                fill[(t, i)]
            }
        })
    }
}

/// Index sets `J^t`, `J_i` and their counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocatorSets {
    /// Series observed at each period.
    pub per_time: Vec<Vec<usize>>,
    /// Periods observed for each series.
    pub per_series: Vec<Vec<usize>>,
    pub n_ot: Vec<usize>,
    pub t_oi: Vec<usize>,
    /// Number of fully observed series.
    pub n_o: usize,
    /// Number of fully observed periods.
    pub t_o: usize,
}

impl LocatorSets {
    pub fn t(&self) -> usize {
        self.per_time.len()
    }

    pub fn n(&self) -> usize {
        self.per_series.len()
    }

    /// Series observed in every period.
    pub fn tall_columns(&self) -> Vec<usize> {
        let t = self.t();
        (0..self.n()).filter(|&i| self.t_oi[i] == t).collect()
    }

    /// Periods in which every series is observed.
    pub fn wide_rows(&self) -> Vec<usize> {
        let n = self.n();
        (0..self.t()).filter(|&t| self.n_ot[t] == n).collect()
    }

    /// Series with at least one missing period.
    pub fn incomplete_series(&self) -> Vec<usize> {
        let t = self.t();
        (0..self.n()).filter(|&i| self.t_oi[i] < t).collect()
    }
}

pub fn build_locators(panel: &PanelMatrix) -> LocatorSets {
    let (tt, n) = (panel.t(), panel.n());
    let mut per_time = alloc::vec![Vec::new(); tt];
    let mut per_series = alloc::vec![Vec::new(); n];
    for i in 0..n {
        for t in 0..tt {
            if panel.mask[(t, i)] {
                per_time[t].push(i);
                per_series[i].push(t);
            }
        }
    }
    let n_ot: Vec<usize> = per_time.iter().map(Vec::len).collect();
    let t_oi: Vec<usize> = per_series.iter().map(Vec::len).collect();
    let n_o = t_oi.iter().filter(|&&c| c == tt).count();
    let t_o = n_ot.iter().filter(|&&c| c == n).count();
    LocatorSets {
        per_time,
        per_series,
        n_ot,
        t_oi,
        n_o,
        t_o,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformMode {
    Raw,
    Demean,
    Standardize,
}

impl TransformMode {
    pub fn name(self) -> &'static str {
        match self {
            TransformMode::Raw => "raw",
            TransformMode::Demean => "demean",
            TransformMode::Standardize => "standardize",
        }
    }
}

/// Per-series affine map applied before imputation.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationRecord {
    pub means: DVector<f64>,
    pub stds: DVector<f64>,
    pub mode: TransformMode,
}

impl StandardizationRecord {
    pub fn identity(n: usize) -> Self {
        StandardizationRecord {
            means: DVector::zeros(n),
            stds: DVector::from_element(n, 1.0),
            mode: TransformMode::Raw,
        }
    }

    /// Map a value of series `i` back to original units.
    #[inline]
    pub fn restore(&self, i: usize, x: f64) -> f64 {
        match self.mode {
            TransformMode::Raw => x,
            TransformMode::Demean => x + self.means[i],
            TransformMode::Standardize => x * self.stds[i] + self.means[i],
        }
    }

    #[inline]
    pub fn apply(&self, i: usize, x: f64) -> f64 {
        match self.mode {
            TransformMode::Raw => x,
            TransformMode::Demean => x - self.means[i],
            TransformMode::Standardize => (x - self.means[i]) / self.stds[i],
        }
    }

    /// Scale factor for spreads (standard errors) of series `i`.
    #[inline]
    pub fn scale(&self, i: usize) -> f64 {
        match self.mode {
            TransformMode::Standardize => self.stds[i],
            _ => 1.0,
        }
    }

    /// Map a full `T x N` matrix back to original units.
    pub fn restore_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: (m.nrows(), self.means.len()),
                found: m.shape(),
            });
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |t, i| {
            self.restore(i, m[(t, i)])
        }))
    }
}

/// Transform observed entries series by series using observed-entry moments only.
pub fn standardize(
    panel: &PanelMatrix,
    mode: TransformMode,
) -> Result<(PanelMatrix, StandardizationRecord)> {
    let n = panel.n();
    let mut record = StandardizationRecord::identity(n);
    record.mode = mode;
    if mode == TransformMode::Raw {
        return Ok((panel.clone(), record));
    }
    for i in 0..n {
        let obs: Vec<f64> = (0..panel.t()).filter_map(|t| panel.get(t, i)).collect();
        let count = obs.len();
        let mean = obs.iter().sum::<f64>() / count as f64;
        record.means[i] = mean;
        if mode == TransformMode::Standardize {
            if count < 2 {
                return Err(Error::TooFewObservations(i));
            }
            let ss: f64 = obs.iter().map(|x| (x - mean) * (x - mean)).sum();
            let sd = libm::sqrt(ss / (count - 1) as f64);
            if !(sd > 0.0) {
                return Err(Error::ZeroVarianceSeries(i));
            }
            record.stds[i] = sd;
        }
    }
    let mut values = panel.values.clone();
    for i in 0..n {
        for t in 0..panel.t() {
            if panel.mask[(t, i)] {
                values[(t, i)] = record.apply(i, values[(t, i)]);
            }
        }
    }
    Ok((
        PanelMatrix {
            values,
            mask: panel.mask.clone(),
        },
        record,
    ))
}

/// Inverse of [`standardize`] on observed entries.
pub fn destandardize(panel: &PanelMatrix, record: &StandardizationRecord) -> Result<PanelMatrix> {
    if panel.n() != record.means.len() || panel.n() != record.stds.len() {
        return Err(Error::DimensionMismatch {
            expected: (panel.t(), record.means.len()),
            found: (panel.t(), panel.n()),
        });
    }
    let mut values = panel.values.clone();
    for i in 0..panel.n() {
        for t in 0..panel.t() {
            if panel.mask[(t, i)] {
                values[(t, i)] = record.restore(i, values[(t, i)]);
            }
        }
    }
    Ok(PanelMatrix {
        values,
        mask: panel.mask.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidationFailure {
    TallBlockTooNarrow { n_o: usize, r: usize },
    SeriesUnderdetermined { series: usize, observed: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// First failure as an error, if any.
    pub fn into_result(self, r: usize) -> Result<()> {
        match self.failures.first() {
            None => Ok(()),
            Some(&ValidationFailure::TallBlockTooNarrow { n_o, r }) => {
                Err(Error::NoTallBlock { n_o, r })
            }
            Some(&ValidationFailure::SeriesUnderdetermined { series, observed }) => {
                Err(Error::SeriesUnderdetermined { series, observed, r })
            }
        }
    }
}

/// Check the identification conditions for `r` factors.
pub fn validate_for_imputation(
    panel: &PanelMatrix,
    locators: &LocatorSets,
    r: usize,
) -> ValidationReport {
    let _ = panel;
    let mut failures = Vec::new();
    if locators.n_o < r {
        failures.push(ValidationFailure::TallBlockTooNarrow {
            n_o: locators.n_o,
            r,
        });
    }
    for (series, &observed) in locators.t_oi.iter().enumerate() {
        if observed < r {
            failures.push(ValidationFailure::SeriesUnderdetermined { series, observed });
        }
    }
    ValidationReport { failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mask_with_missing(t: usize, n: usize, cells: &[(usize, usize)]) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(t, n, true);
        for &(a, b) in cells {
            m[(a, b)] = false;
        }
        m
    }

    #[test]
    fn complete_panel_locators() {
        let p = PanelMatrix::complete(DMatrix::from_fn(5, 4, |t, i| (t + i) as f64)).unwrap();
        let loc = build_locators(&p);
        assert_eq!(loc.n_o, 4);
        assert_eq!(loc.t_o, 5);
        assert!(loc.t_oi.iter().all(|&c| c == 5));
    }

    #[test]
    fn block_missing_locators() {
        let (t, n, n_o) = (8, 5, 2);
        let mut cells = vec![];
        for i in n_o..n {
            for s in t - 3..t {
                cells.push((s, i));
            }
        }
        let p = PanelMatrix::new(DMatrix::zeros(t, n), mask_with_missing(t, n, &cells)).unwrap();
        let loc = build_locators(&p);
        assert_eq!(loc.t_oi, vec![8, 8, 5, 5, 5]);
        assert_eq!(loc.t_o, t - 3);
        assert_eq!(loc.n_o, n_o);
    }

    #[test]
    fn single_missing_cell() {
        // one-based (3, 4) is zero-based period 2, series 3
        let p = PanelMatrix::new(DMatrix::zeros(6, 4), mask_with_missing(6, 4, &[(2, 3)])).unwrap();
        let loc = build_locators(&p);
        assert_eq!(loc.n_o, 3);
        assert_eq!(loc.t_o, 5);
        assert_eq!(loc.n_ot[2], 3);
        assert_eq!(loc.per_time[2], vec![0, 1, 2]);
    }

    #[test]
    fn rejects_empty_series_and_shape_mismatch() {
        let mut m = DMatrix::from_element(3, 2, true);
        m.column_mut(1).fill(false);
        assert_eq!(
            PanelMatrix::new(DMatrix::zeros(3, 2), m).unwrap_err(),
            Error::EmptySeries(1)
        );
        assert!(matches!(
            PanelMatrix::new(DMatrix::zeros(3, 2), DMatrix::from_element(2, 3, true)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn raw_mode_is_identity() {
        let p = PanelMatrix::complete(DMatrix::from_fn(4, 3, |t, i| (t * 3 + i) as f64)).unwrap();
        let (q, rec) = standardize(&p, TransformMode::Raw).unwrap();
        assert_eq!(p, q);
        assert!(rec.means.iter().all(|&m| m == 0.0));
        assert!(rec.stds.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn demean_two_points() {
        let p = PanelMatrix::complete(DMatrix::from_column_slice(2, 1, &[2.0, 4.0])).unwrap();
        let (q, _) = standardize(&p, TransformMode::Demean).unwrap();
        assert_eq!(q.get(0, 0), Some(-1.0));
        assert_eq!(q.get(1, 0), Some(1.0));
    }

    #[test]
    fn standardize_ignores_missing() {
        let values = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 99.0]);
        let mask = mask_with_missing(4, 1, &[(3, 0)]);
        let p = PanelMatrix::new(values, mask).unwrap();
        let (q, rec) = standardize(&p, TransformMode::Standardize).unwrap();
        assert_eq!(rec.means[0], 2.0);
        assert_eq!(rec.stds[0], 1.0);
        assert_eq!(q.get(0, 0), Some(-1.0));
        assert_eq!(q.get(2, 0), Some(1.0));
        assert_eq!(q.get(3, 0), None);
    }

    #[test]
    fn standardize_errors() {
        let c = PanelMatrix::complete(DMatrix::from_element(3, 1, 5.0)).unwrap();
        assert_eq!(
            standardize(&c, TransformMode::Standardize).unwrap_err(),
            Error::ZeroVarianceSeries(0)
        );
        let one = PanelMatrix::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            mask_with_missing(2, 1, &[(1, 0)]),
        )
        .unwrap();
        assert_eq!(
            standardize(&one, TransformMode::Standardize).unwrap_err(),
            Error::TooFewObservations(0)
        );
    }

    #[test]
    fn affine_restore() {
        let rec = StandardizationRecord {
            means: DVector::from_vec(vec![3.0]),
            stds: DVector::from_vec(vec![2.0]),
            mode: TransformMode::Standardize,
        };
        assert_eq!(rec.restore(0, 0.5), 4.0);
    }

    #[test]
    fn validation_failures() {
        let mut mask = DMatrix::from_element(5, 3, true);
        mask[(4, 1)] = false;
        for t in 1..5 {
            mask[(t, 2)] = false;
        }
        let p = PanelMatrix::new(DMatrix::zeros(5, 3), mask).unwrap();
        let loc = build_locators(&p);
        let rep = validate_for_imputation(&p, &loc, 2);
        assert!(rep
            .failures
            .contains(&ValidationFailure::TallBlockTooNarrow { n_o: 1, r: 2 }));
        assert!(rep.failures.contains(&ValidationFailure::SeriesUnderdetermined {
            series: 2,
            observed: 1
        }));
        let full = PanelMatrix::complete(DMatrix::zeros(5, 3)).unwrap();
        assert!(validate_for_imputation(&full, &build_locators(&full), 3).passed());
    }
}
