use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metric requires both target and nontarget trials")]
    OneClass,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Stable, machine-parsable error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO",
            Error::Format(_) => "FORMAT",
            Error::Dimension(_) => "DIMENSION",
            Error::Precondition(_) => "PRECONDITION",
            Error::NonFinite(_) => "NON_FINITE",
            Error::OneClass => "METRIC_ONE_CLASS",
            Error::Numerical(_) => "NUMERICAL",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
