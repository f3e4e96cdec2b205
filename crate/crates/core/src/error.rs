use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("numerical breakdown at iteration {iteration}: {detail}")]
    NumericalBreakdown { iteration: usize, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error in [{section}] {key}: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(
        section: impl Into<String>,
        key: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Config {
            section: section.into(),
            key: key.into(),
            message: message.into(),
        }
    }
}
