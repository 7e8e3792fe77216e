use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("threshold exceeded: {0}")]
    Threshold(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Threshold(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<kwc_core::Error> for CliError {
    fn from(e: kwc_core::Error) -> Self {
        use kwc_core::Error as E;
        match e {
            E::Shape(_) | E::InvalidParameter(_) | E::Admissibility(_) => {
                CliError::Validation(e.to_string())
            }
            E::SubdifferentialPoint | E::Numerical(_) | E::NoConvergence { .. } => {
                CliError::Solver(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
