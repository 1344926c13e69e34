use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data for {what}: have {have}, need at least {need}")]
    InsufficientData { what: String, have: usize, need: usize },

    #[error("numerical inversion unstable: {0}")]
    Inversion(String),

    #[error("acceptance rate {rate:.3e} below floor {floor:.1e} after {attempts} attempts; lower the conditioning level")]
    LowAcceptance { rate: f64, floor: f64, attempts: u64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
