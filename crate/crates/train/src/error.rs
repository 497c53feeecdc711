use std::fmt;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug)]
pub enum TrainError {
    Model(mm_model::ModelError),
    Data(mm_data::DataError),
    Tensor(mm_tensor::TensorError),
    /// A non-finite gradient or loss; training aborts with diagnostics.
    NonFinite(String),
    /// Bad harness configuration.
    Invalid(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::NonFinite(m) => write!(f, "non-finite abort: {m}"),
            TrainError::Invalid(m) => write!(f, "train config: {m}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<mm_model::ModelError> for TrainError {
    fn from(e: mm_model::ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<mm_data::DataError> for TrainError {
    fn from(e: mm_data::DataError) -> Self {
        TrainError::Data(e)
    }
}

impl From<mm_tensor::TensorError> for TrainError {
    fn from(e: mm_tensor::TensorError) -> Self {
        TrainError::Tensor(e)
    }
}
