use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// A step produced a non-finite coefficient or left the bounded regime.
    #[error("path {path} diverged at step {step}: {reason}")]
    Divergence {
        path: u64,
        step: usize,
        reason: String,
    },

    /// The requested diagnostic is too expensive for the given resolution.
    #[error("refusing evaluation: {0}")]
    Cost(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfiguration(msg.into())
    }
}
