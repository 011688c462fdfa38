use lrsim_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
