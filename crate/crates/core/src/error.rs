use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient overlap: arm {arm}: {detail}")]
    InsufficientOverlap { arm: usize, detail: String },

    #[error("invalid value at row {row}, column `{column}`: {detail}")]
    Validation {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid treatment contrast {arm}: must be in 1..={max}")]
    InvalidContrast { arm: usize, max: usize },

    #[error("variance undefined for {0} sample(s); need at least 2")]
    UndefinedVariance(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the underlying filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
