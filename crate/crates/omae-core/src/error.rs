use thiserror::Error;

/// Error type shared across the pipeline.
///
/// Variants map onto the CLI exit codes: config errors exit 2, data errors
/// exit 3, numeric failures exit 4, I/O errors exit 5.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Shape or consistency violation between pipeline stages.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed on-disk data.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Semantically bad data (non-finite values, unreadable scenes).
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure during training (NaN gradients, failed checks).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for this error per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Format { .. } | Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
