use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("degenerate region {region}: all points collocated")]
    DegenerateRegion { region: usize },
    #[error("problem too large: {what} = {got} exceeds limit {limit}")]
    Size {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("oracle error: {message}")]
    Oracle {
        message: String,
        /// Raw wire payload that triggered the failure, if any.
        payload: Option<String>,
    },
    #[error("degenerate normalizer: {0}")]
    DegenerateNormalizer(String),
    #[error("degenerate embedding: |z(N) - z(empty)| = {0:e}")]
    DegenerateEmbedding(f64),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn oracle(msg: impl Into<String>, payload: Option<String>) -> Self {
        Error::Oracle {
            message: msg.into(),
            payload,
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Error::Oracle { .. })
    }
}
