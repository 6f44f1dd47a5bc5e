//! Error kinds for the IO layer, each mapped to a process exit code.

use refuel_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupted payload: {0}")]
    Parse(String),
    #[error("unknown schema version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid artifact: {0}")]
    Invalid(CoreError),
    #[error("numerical failure: {0}")]
    Numerical(CoreError),
    #[error("iteration budget exhausted: {0}")]
    BudgetExhausted(String),
}

impl IoError {
    pub(crate) fn from_serde(e: serde_json::Error) -> Self {
        IoError::Parse(e.to_string())
    }

    /// Process exit code for the CLI contract: 1 usage, 2 invalid
    /// input/schema, 3 numerical failure, 4 budget exhausted.
    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::Io(_)
            | IoError::Parse(_)
            | IoError::Version { .. }
            | IoError::Schema(_)
            | IoError::Invalid(_) => 2,
            IoError::Numerical(_) => 3,
            IoError::BudgetExhausted(_) => 4,
        }
    }

    /// Short machine-readable kind for structured diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Io(_) => "io",
            IoError::Parse(_) => "parse",
            IoError::Version { .. } => "version",
            IoError::Schema(_) => "schema",
            IoError::Invalid(_) => "invalid",
            IoError::Numerical(_) => "numerical",
            IoError::BudgetExhausted(_) => "budget",
        }
    }
}

impl From<CoreError> for IoError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical { .. } => IoError::Numerical(e),
            _ => IoError::Invalid(e),
        }
    }
}
