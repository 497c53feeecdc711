use std::fmt;

/// Result alias used throughout the tensor crate.
pub type Result<T> = std::result::Result<T, TensorError>;

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shapes of the operands are incompatible for the given operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// A constructor received data containing NaN or infinity.
    NonFinite { op: &'static str },
    /// An operation argument is out of its documented domain.
    InvalidArgument { op: &'static str, detail: String },
    /// A tensor was produced by a different tape than the one operating on it.
    ForeignTape { op: &'static str },
    /// `backward` requires a scalar loss tensor.
    NonScalarLoss { numel: usize },
    /// `backward` was called on a tape that was not recording.
    NotRecording,
    /// An index (token id, row, class) is outside its valid range.
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, detail } => {
                write!(f, "{op}: shape mismatch: {detail}")
            }
            TensorError::NonFinite { op } => {
                write!(f, "{op}: non-finite value (NaN or Inf)")
            }
            TensorError::InvalidArgument { op, detail } => {
                write!(f, "{op}: invalid argument: {detail}")
            }
            TensorError::ForeignTape { op } => {
                write!(f, "{op}: input tensor belongs to a different tape")
            }
            TensorError::NonScalarLoss { numel } => {
                write!(f, "backward: loss must be scalar, got {numel} elements")
            }
            TensorError::NotRecording => {
                write!(f, "backward: tape is not recording")
            }
            TensorError::IndexOutOfRange { op, index, bound } => {
                write!(f, "{op}: index {index} out of range (< {bound} required)")
            }
        }
    }
}

impl std::error::Error for TensorError {}
