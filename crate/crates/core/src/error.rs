use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("execution failed at node {node} ({name}): {reason}")]
    Exec {
        node: usize,
        name: String,
        reason: String,
    },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },
    #[error("ratio {ratio}: {source}")]
    Sweep {
        ratio: usize,
        #[source]
        source: Box<Error>,
    },
    /// A pipeline peer hung up; the root cause is reported by the failing worker.
    #[error("pipeline channel disconnected")]
    Disconnected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
