use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("shapes {0:?} and {1:?} are not broadcastable")]
    NotBroadcastable(Vec<usize>, Vec<usize>),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
    #[error("backward() called twice on the same graph root")]
    DoubleBackward,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
