use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit-code contract: configuration problems,
/// data problems, and numeric/state failures are distinguishable by the
/// caller.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric/state.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::InsufficientData(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numeric { .. } | Error::State(_) | Error::UndefinedMetric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
