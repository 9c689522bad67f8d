use std::path::PathBuf;

/// Errors produced by the simulator, the learners and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error in row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
