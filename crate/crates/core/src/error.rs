use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's precondition (shape, label range, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Input is valid but exceeds a guard on cost or size.
    #[error("refused: {0}")]
    Refusal(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::Error::Domain(format!($($arg)*)) };
}
pub(crate) use domain_err;
