use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violated its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A point evaluation fell outside the support, or hit a 0/0 ratio.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("domain error at index {index}: {source}")]
    AtIndex { index: usize, source: Box<Error> },

    /// The requested problem size exceeds what the exact algorithm supports.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("estimate unavailable: {0}")]
    Estimate(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("assumption violated: {0}")]
    Assumption(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(self, index: usize) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(self),
        }
    }

    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Argument(_) => "invalid_argument",
            Error::Domain(_) | Error::AtIndex { .. } => "domain_error",
            Error::Capacity(_) => "capacity_exceeded",
            Error::Degenerate(_) => "degenerate_input",
            Error::Estimate(_) => "estimate_unavailable",
            Error::Fit(_) => "fit_failed",
            Error::Assumption(_) => "assumption_violated",
        }
    }
}
