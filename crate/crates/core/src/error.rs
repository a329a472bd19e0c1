use std::path::PathBuf;

use thiserror::Error;

use crate::protocol::CellKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("photon cutoff {cutoff} leaves truncated mass {bound:.3e}, above tolerance {tolerance:.3e}")]
    Precision { cutoff: usize, bound: f64, tolerance: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at {cell}: {message}")]
    Validation { cell: CellKey, message: String },

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
