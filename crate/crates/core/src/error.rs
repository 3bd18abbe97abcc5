use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate global feature: |f_g|^2 = {norm_sq:e} is below the guard")]
    DegenerateGlobal { norm_sq: f64 },

    #[error("protocol error: query {query} has no valid gallery match after exclusion")]
    NoValidMatch { query: usize },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("failed to load {what}: {msg}")]
    Load { what: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Load {
            what: what.into(),
            msg: msg.into(),
        }
    }
}
