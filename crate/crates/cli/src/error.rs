use attractor_core::Error;
use thiserror::Error as ThisError;

/// Failures grouped by exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Wraps a library error with the pipeline stage and the config field it
    /// came from.
    pub fn at(stage: &str, field: &str, err: Error) -> Self {
        let msg = format!("stage `{stage}` (config `{field}`): {err}");
        if err.is_numerical() {
            CliError::Numerical(msg)
        } else if matches!(err, Error::Validation(_) | Error::Dimension { .. }) {
            CliError::Config(vec![msg])
        } else {
            CliError::Io(msg)
        }
    }

    pub fn io(what: &str, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{what}: {err}"))
    }
}
