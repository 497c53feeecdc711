//! Elementwise and scalar-broadcast operations.

use crate::error::{Result, TensorError};
use crate::rng::RngStream;
use crate::tape::{Broadcast, Op, Tape};
use crate::tensor::Tensor;

/// Classifies the right operand against the left: same shape, one element,
/// or a trailing-axes suffix of the left shape.
fn classify(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    allow_suffix: bool,
) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    if allow_suffix && a.rank() > b.rank() && a.shape().ends_with(b.shape()) {
        return Ok(Broadcast::Suffix);
    }
    Err(TensorError::ShapeMismatch {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    })
}

impl Tape {
    /// Elementwise sum. The right operand may be a scalar or a tensor whose
    /// shape is a suffix of the left's (broadcast over leading axes).
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bcast = classify("add", a, b, true)?;
        let sa = self.saved(a, "add")?;
        let sb = self.saved(b, "add")?;
        let data = match bcast {
            Broadcast::Same => a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| x + y)
                .collect(),
            Broadcast::Scalar => {
                let s = b.data()[0];
                a.data().iter().map(|x| x + s).collect()
            }
            Broadcast::Suffix => {
                let bl = b.numel();
                let mut out = a.data().to_vec();
                for chunk in out.chunks_exact_mut(bl) {
                    for (x, y) in chunk.iter_mut().zip(b.data().iter()) {
                        *x += y;
                    }
                }
                out
            }
        };
        Ok(self.push(Op::Add { a: sa, b: sb, bcast }, a.shape().to_vec(), data))
    }

    /// `a - b`, via scale and add.
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, &nb)
    }

    /// Elementwise product; the right operand may be a scalar tensor.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bcast = classify("mul", a, b, false)?;
        let sa = self.saved(a, "mul")?;
        let sb = self.saved(b, "mul")?;
        let data = match bcast {
            Broadcast::Same => a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| x * y)
                .collect(),
            _ => {
                let s = b.data()[0];
                a.data().iter().map(|x| x * s).collect()
            }
        };
        Ok(self.push(Op::Mul { a: sa, b: sb, bcast }, a.shape().to_vec(), data))
    }

    /// Elementwise quotient; the right operand may be a scalar tensor.
    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bcast = classify("div", a, b, false)?;
        if b.data().iter().any(|v| *v == 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let sa = self.saved(a, "div")?;
        let sb = self.saved(b, "div")?;
        let data = match bcast {
            Broadcast::Same => a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| x / y)
                .collect(),
            _ => {
                let s = b.data()[0];
                a.data().iter().map(|x| x / s).collect()
            }
        };
        Ok(self.push(Op::Div { a: sa, b: sb, bcast }, a.shape().to_vec(), data))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(TensorError::NonFinite { op: "scale" });
        }
        let sx = self.saved(x, "scale")?;
        let data = x.data().iter().map(|v| v * c).collect();
        Ok(self.push(Op::Scale { x: sx, c }, x.shape().to_vec(), data))
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        let sx = self.saved(x, "relu")?;
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        Ok(self.push(Op::Relu { x: sx }, x.shape().to_vec(), data))
    }

    pub fn softplus(&mut self, x: &Tensor) -> Result<Tensor> {
        let sx = self.saved(x, "softplus")?;
        let data = x
            .data()
            .iter()
            .map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        Ok(self.push(Op::Softplus { x: sx }, x.shape().to_vec(), data))
    }

    /// Inverted dropout: in training, keeps each value with probability
    /// `1 - rate` and scales survivors by `1/(1-rate)` so the expectation
    /// matches the input; in eval it is the identity, bit for bit.
    pub fn dropout(
        &mut self,
        x: &Tensor,
        rate: f64,
        train: bool,
        rng: &mut RngStream,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.next_uniform() < keep { inv } else { 0.0 })
            .collect();
        let mask = Tensor::from_op(x.shape().to_vec(), mask, None);
        self.mul(x, &mask)
    }
}
