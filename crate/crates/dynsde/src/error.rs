use thiserror::Error;

/// Failures of the harness, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric abort: {0}")]
    Numeric(dynsde_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<dynsde_core::Error> for CliError {
    fn from(e: dynsde_core::Error) -> Self {
        use dynsde_core::Error as E;
        match e {
            E::NonFinite { .. } | E::StepSizeCollapse { .. } => CliError::Numeric(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
