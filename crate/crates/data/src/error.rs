use std::fmt;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug)]
pub enum DataError {
    /// The tokenizer cannot learn from an empty corpus.
    EmptyCorpus,
    /// A vocab or merges file failed to parse.
    Format(String),
    /// No task with the requested name exists in the roster.
    UnknownTask(String),
    /// Batch construction was asked for something inconsistent.
    Invalid(String),
    Io(std::io::Error),
    Tensor(mm_tensor::TensorError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::EmptyCorpus => write!(f, "tokenizer: corpus is empty"),
            DataError::Format(m) => write!(f, "tokenizer: bad file format: {m}"),
            DataError::UnknownTask(n) => write!(f, "unknown task name {n:?}"),
            DataError::Invalid(m) => write!(f, "invalid request: {m}"),
            DataError::Io(e) => write!(f, "io error: {e}"),
            DataError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

impl From<mm_tensor::TensorError> for DataError {
    fn from(e: mm_tensor::TensorError) -> Self {
        DataError::Tensor(e)
    }
}
