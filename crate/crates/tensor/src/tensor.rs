//! Dense row-major f64 tensor.
//!
//! A `Tensor` is an immutable value: shape and data never change after
//! construction. Cloning is cheap (the buffer is shared through `Arc`).
//! When a tensor was produced by a recording [`crate::Tape`] it carries the
//! id of its tape node so later operations can extend the graph.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::rng::RngStream;

/// Reference into a tape: which tape (by id) and which node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NodeRef {
    pub tape_id: u64,
    pub index: usize,
}

/// Dense N-dimensional array of finite f64 values, row-major.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    /// Builds a tensor, validating the element count and that every value is
    /// finite. NaN or infinity is a construction error.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidArgument {
                op: "Tensor::new",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    /// Internal constructor for op outputs; validates finiteness only in
    /// debug builds (ops cannot introduce shape errors).
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, node: Option<NodeRef>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "op produced a non-finite value"
        );
        Tensor {
            shape,
            data: Arc::new(data),
            node,
        }
    }

    pub(crate) fn with_shared_data(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        node: Option<NodeRef>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data, node }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel]),
            node: None,
        }
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(&[1], vec![value])
    }

    /// Gaussian-filled tensor, `N(0, sigma^2)`, drawn from `rng`.
    pub fn randn(shape: &[usize], sigma: f64, rng: &mut RngStream) -> Tensor {
        let numel = shape.iter().product();
        let mut data = vec![0.0; numel];
        rng.fill_normal(&mut data, sigma);
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Single stored value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss { numel: self.numel() });
        }
        Ok(self.data[0])
    }

    /// Detached copy: same shape and data, no tape node.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Copy with one value replaced; used by perturbation tests and
    /// finite differences. Validates the new value is finite.
    pub fn with_value_at(&self, index: usize, value: f64) -> Result<Tensor> {
        if index >= self.numel() {
            return Err(TensorError::IndexOutOfRange {
                op: "Tensor::with_value_at",
                index,
                bound: self.numel(),
            });
        }
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: "Tensor::with_value_at",
            });
        }
        let mut data = self.data.as_ref().clone();
        data[index] = value;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            node: None,
        })
    }

    /// Exact bitwise equality of shape and data.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Named learnable tensor. The name keys gradients, optimizer state and the
/// checkpoint entry for this parameter.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Param {
        Param {
            name: name.into(),
            value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_data() {
        assert!(matches!(
            Tensor::new(&[2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
        assert!(matches!(
            Tensor::new(&[2], vec![f64::INFINITY, 0.0]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn rejects_shape_data_mismatch() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn shape_matches_numel() {
        let t = Tensor::new(&[2, 3, 4], vec![0.5; 24]).unwrap();
        assert_eq!(t.numel(), 24);
        assert_eq!(t.shape(), &[2, 3, 4]);
    }

    #[test]
    fn bit_eq_detects_sign_of_zero() {
        let a = Tensor::new(&[1], vec![0.0]).unwrap();
        let b = Tensor::new(&[1], vec![-0.0]).unwrap();
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&a.clone()));
    }
}
