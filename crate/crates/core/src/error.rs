use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto a
/// process exit code via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("accuracy not reached: {what} (achieved residual {residual:.3e})")]
    Accuracy { what: String, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("record format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn accuracy(what: impl Into<String>, residual: f64) -> Self {
        Error::Accuracy {
            what: what.into(),
            residual,
        }
    }

    /// 2 for configuration problems, 3 for numerical accuracy failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Accuracy { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
