use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum ScmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScmError {
    /// Process exit code: 1 for numeric failures, 2 for configuration or data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScmError::Numeric(_) => 1,
            _ => 2,
        }
    }

    /// Prefixes the message with a module / block location.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            ScmError::Config(m) => ScmError::Config(format!("{ctx}: {m}")),
            ScmError::Data(m) => ScmError::Data(format!("{ctx}: {m}")),
            ScmError::Numeric(m) => ScmError::Numeric(format!("{ctx}: {m}")),
            ScmError::Domain(m) => ScmError::Domain(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, ScmError>;
