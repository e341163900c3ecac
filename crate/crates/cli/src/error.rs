use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(String),

    /// Malformed input file.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] freqlfdr::Error),

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Input(_) => "input",
            CliError::Config(_) => "config",
            CliError::Core(e) => e.code(),
            CliError::ChecksFailed { .. } => "check_failed",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(freqlfdr::Error::Argument(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
