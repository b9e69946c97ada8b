use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("matrix is not symmetric in {0}")]
    NotSymmetric(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("dense capacity exceeded: {requested} parameters > cap {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("grid search failed: {0}")]
    Search(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
