use lrsim_nn::ContainerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
