use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity is outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// A hit fraction that cannot be bracketed by the distance search.
    #[error("bracket error: p_hit = {p_hit} outside [{lo}, {hi}]")]
    Bracket { p_hit: f64, lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A covariance matrix could not be repaired into a positive definite one.
    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("non-finite loss during training")]
    Divergence,

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Bracket { .. } => "bracket",
            Error::InvalidInput(_) => "invalid-input",
            Error::Singular(_) => "singular",
            Error::Divergence => "divergence",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn config(key: &str, msg: impl ToString) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.to_string(),
        }
    }
}
