use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Rows are 1-based data rows (header excluded).
    #[error("malformed CSV at data row {row}: {reason}")]
    MalformedCsv { row: usize, reason: String },

    #[error("input contains no data rows")]
    EmptyInput,

    /// Rows are 1-based data rows, columns are 1-based file columns.
    #[error("non-finite value at data row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("window of width {width} ending at {end_index} is out of bounds for a series of length {len}")]
    OutOfBounds { end_index: usize, width: usize, len: usize },

    #[error("window too small: {got} samples, need at least {min}")]
    WindowTooSmall { got: usize, min: usize },

    #[error("state {0} is not positive; geometric Brownian motion needs S > 0")]
    NonPositiveState(f64),

    #[error("degenerate window: {0} drift samples, need at least 2")]
    DegenerateWindow(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("singular design matrix: lag regressors are collinear")]
    SingularDesign,

    #[error("length mismatch: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },

    #[error("reports are not comparable: {0}")]
    ProtocolMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::SingularDesign | Error::DegenerateWindow(_) | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
