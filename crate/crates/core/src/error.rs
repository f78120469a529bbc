use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A cluster could not be turned into a usable Gaussian (e.g. Cholesky failed
    /// after regularization) or has no members to sample from.
    #[error("degenerate model: {0}")]
    ModelDegenerate(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("image format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
