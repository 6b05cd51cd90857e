use thiserror::Error;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("series {0} has no observed entries")]
    EmptySeries(usize),
    #[error("series {0} has zero variance over its observed entries")]
    ZeroVarianceSeries(usize),
    #[error("series {0} has fewer than two observed entries")]
    TooFewObservations(usize),
    #[error("rank {r} exceeds min(T, N) = {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("singular value decomposition did not converge")]
    SvdFailure,
    #[error("tall block has {n_o} fully observed series, need at least {r}")]
    NoTallBlock { n_o: usize, r: usize },
    #[error("wide block has {t_o} fully observed periods, need at least {r}")]
    NoWideBlock { t_o: usize, r: usize },
    #[error("series {series} has {observed} observations, need at least {r}")]
    SeriesUnderdetermined {
        series: usize,
        observed: usize,
        r: usize,
    },
    #[error("loading regression for series {0} is rank deficient")]
    SingularDesign(usize),
    #[error("rotation regression is rank deficient")]
    RotationSingular,
    #[error("moment matrix is numerically singular")]
    SingularMoment,
    #[error("cell (series {i}, period {t}) is observed")]
    CellObserved { i: usize, t: usize },
    #[error("cell (series {i}, period {t}) is out of range")]
    IndexOutOfRange { i: usize, t: usize },
    #[error("operation not defined for method {0}")]
    MethodMismatch(&'static str),
    #[error("regressor matrix is rank deficient")]
    RankDeficientDesign,
    #[error("horizon {h} leaves too few observations (T = {t}, regressors = {k})")]
    HorizonTooLarge { h: usize, t: usize, k: usize },
    #[error("series {0} and {1} share fewer than two observed periods")]
    InsufficientOverlap(usize, usize),
    #[error("series {0} has fewer than two observed residuals")]
    SeriesTooShort(usize),
    #[error("series {0} has no observed residuals to resample")]
    EmptyResidualPool(usize),
    #[error("result carries no residuals to overlay")]
    SchemeUnavailable,
    #[error("covariance matrix is not positive definite")]
    SingularCovariance,
    #[error("quadratic form is negative")]
    NegativeQuadraticForm,
    #[error("missing pattern leaves no fully observed series or empties a series")]
    PatternDegeneratesPanel,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
