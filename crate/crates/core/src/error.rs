use thiserror::Error;

/// Errors raised by estimators, mask constructors and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite value at unit {unit}, period {period}")]
    NonFinite { unit: usize, period: usize },

    #[error("observation mask is empty")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate cross-validation: {0}")]
    DegenerateCv(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors that mean "this estimator cannot run on this data",
    /// as opposed to malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::EmptyMask | Error::IllPosed(_) | Error::Infeasible(_) | Error::DegenerateCv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
