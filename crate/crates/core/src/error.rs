use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {matrix}: expected {expected:?}, found {found:?}")]
    Dimension {
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("numerically singular {what} (condition number {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("invalid input: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: missing column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error("{}:{line}: unparsable timestamp `{value}`", path.display())]
    Timestamp {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("{}:{line}: timestamp not after previous row", path.display())]
    NonMonotone { path: PathBuf, line: usize },

    #[error("{}:{line}: timestamp `{value}` is off the sampling grid", path.display())]
    OffGrid {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    /// True for failures caused by bad user input rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Dimension { .. }
                | Error::MissingColumn { .. }
                | Error::Timestamp { .. }
                | Error::NonMonotone { .. }
                | Error::OffGrid { .. }
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. })
    }
}
