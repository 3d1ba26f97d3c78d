use thiserror::Error;

/// Errors raised across the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// The Lippmann-Schwinger system is singular or too ill-conditioned to
    /// trust, which signals a non-physical contrast.
    #[error("ill-conditioned scattering system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("base station {index}: {source}")]
    Agent {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
