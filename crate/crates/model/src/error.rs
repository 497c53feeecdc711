use std::fmt;

use mm_tensor::TensorError;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    /// Invalid model configuration (dimension constraints and the like).
    Config(String),
    /// Batch and route disagree, or a batch is structurally unusable.
    Route(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Config(m) => write!(f, "model config: {m}"),
            ModelError::Route(m) => write!(f, "route: {m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}
