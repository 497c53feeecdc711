//! Last-axis normalizations: softmax family and layer normalization.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tape::{Op, Tape};
use crate::tensor::Tensor;

impl Tape {
    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        let cols = last_axis(x, "softmax")?;
        let sx = self.saved(x, "softmax")?;
        let mut out = vec![0.0; x.numel()];
        for (orow, xrow) in out.chunks_exact_mut(cols).zip(x.data().chunks_exact(cols)) {
            softmax_row(xrow, orow);
        }
        Ok(self.push(Op::Softmax { x: sx }, x.shape().to_vec(), out))
    }

    /// Log-softmax along the last axis; the numerically safe route to
    /// cross-entropy.
    pub fn log_softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        let cols = last_axis(x, "log_softmax")?;
        let sx = self.saved(x, "log_softmax")?;
        let mut out = vec![0.0; x.numel()];
        for (orow, xrow) in out.chunks_exact_mut(cols).zip(x.data().chunks_exact(cols)) {
            let max = xrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = xrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for (o, v) in orow.iter_mut().zip(xrow.iter()) {
                *o = v - lse;
            }
        }
        Ok(self.push(Op::LogSoftmax { x: sx }, x.shape().to_vec(), out))
    }

    /// Softmax restricted to positions where `mask` is nonzero; masked
    /// positions are exactly zero in the output (not merely small). `mask`
    /// is a constant 0/1 tensor of the same shape with at least one active
    /// entry per row.
    pub fn masked_softmax(&mut self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        if mask.shape() != x.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("{:?} vs mask {:?}", x.shape(), mask.shape()),
            });
        }
        let cols = last_axis(x, "masked_softmax")?;
        let sx = self.saved(x, "masked_softmax")?;
        let mut out = vec![0.0; x.numel()];
        for ((orow, xrow), mrow) in out
            .chunks_exact_mut(cols)
            .zip(x.data().chunks_exact(cols))
            .zip(mask.data().chunks_exact(cols))
        {
            let mut max = f64::NEG_INFINITY;
            for (v, m) in xrow.iter().zip(mrow.iter()) {
                if *m != 0.0 && *v > max {
                    max = *v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::InvalidArgument {
                    op: "masked_softmax",
                    detail: "a row has no active mask entry".into(),
                });
            }
            let mut sum = 0.0;
            for ((o, v), m) in orow.iter_mut().zip(xrow.iter()).zip(mrow.iter()) {
                if *m != 0.0 {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        // Shares the softmax backward: masked outputs are exactly zero,
        // which zeroes their gradient slots.
        Ok(self.push(Op::Softmax { x: sx }, x.shape().to_vec(), out))
    }

    /// Normalizes the last axis to zero mean and unit variance (population
    /// statistics), then applies the learned gain and shift.
    pub fn layer_norm(
        &mut self,
        x: &Tensor,
        gain: &Tensor,
        shift: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let cols = last_axis(x, "layer_norm")?;
        if gain.shape() != [cols] || shift.shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gain {:?} / shift {:?} vs channels {}",
                    gain.shape(),
                    shift.shape(),
                    cols
                ),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                detail: format!("eps {eps} must be positive"),
            });
        }
        let rows = x.numel() / cols;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        let g = gain.data();
        let b = shift.data();
        for r in 0..rows {
            let o = r * cols;
            let xrow = &x.data()[o..o + cols];
            let mean = xrow.iter().sum::<f64>() / cols as f64;
            let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let xh = (xrow[c] - mean) * inv;
                xhat[o + c] = xh;
                out[o + c] = g[c] * xh + b[c];
            }
        }
        let sx = self.saved(x, "layer_norm")?;
        let sg = self.saved(gain, "layer_norm")?;
        let sb = self.saved(shift, "layer_norm")?;
        Ok(self.push(
            Op::LayerNorm {
                x: sx,
                gain: sg,
                shift: sb,
                xhat: Arc::new(xhat),
                inv_std: Arc::new(inv_std),
            },
            x.shape().to_vec(),
            out,
        ))
    }
}

fn last_axis(x: &Tensor, op: &'static str) -> Result<usize> {
    x.shape().last().copied().ok_or(TensorError::ShapeMismatch {
        op,
        detail: "rank-0 tensor".into(),
    })
}

pub(crate) fn softmax_row(xrow: &[f64], orow: &mut [f64]) {
    let max = xrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in orow.iter_mut().zip(xrow.iter()) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in orow.iter_mut() {
        *o /= sum;
    }
}
