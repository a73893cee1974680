use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("accuracy not attainable: {0}")]
    Accuracy(String),
    #[error("step rejected: {0}")]
    Unstable(String),
    #[error("state space too large: {size} states, limit {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("not enough samples: {0}")]
    Samples(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}
