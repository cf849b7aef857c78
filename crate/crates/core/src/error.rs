use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("root not bracketed: {0}")]
    NotBracketed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// Errors caused by bad user input rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Invalid(_) | Error::Precondition(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
