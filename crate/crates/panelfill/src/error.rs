use std::path::PathBuf;

use panelfill_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type AppResult<T> = Result<T, AppError>;

/// Exit status for usage problems.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for invalid or unreadable data.
pub const EXIT_DATA: i32 = 3;
/// Exit status for numerical failures.
pub const EXIT_NUMERIC: i32 = 4;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config(_) => EXIT_USAGE,
            AppError::Data(_) | AppError::Io { .. } | AppError::Csv { .. } | AppError::Json(_) => EXIT_DATA,
            AppError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    use CoreError::*;
    match e {
        InvalidArgument(_) | RankTooLarge { .. } | ZeroRank | MethodMismatch(_) | HorizonTooLarge { .. } => {
            EXIT_USAGE
        }
        SvdFailure | SingularDesign(_) | RotationSingular | SingularMoment | RankDeficientDesign
        | SingularCovariance | NegativeQuadraticForm => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}
