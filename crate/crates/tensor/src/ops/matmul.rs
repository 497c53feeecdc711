//! Batched matrix multiplication and the pointwise (1x1) convolution
//! expressed through it.

use crate::error::{Result, TensorError};
use crate::tape::{Op, Saved, Tape};
use crate::tensor::Tensor;

impl Tape {
    /// `a [.., m, k] @ b [.., k, n]`; leading batch axes must be identical.
    /// Plain 2-D by 2-D multiplication is the degenerate case.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("ranks {:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let r = a.rank();
        let (m, k) = (a.shape()[r - 2], a.shape()[r - 1]);
        let (kb, n) = (b.shape()[r - 2], b.shape()[r - 1]);
        if k != kb || a.shape()[..r - 2] != b.shape()[..r - 2] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let batch: usize = a.shape()[..r - 2].iter().product();

        let mut out = vec![0.0; batch * m * n];
        matmul_into(a.data(), b.data(), batch, m, k, n, &mut out);

        let mut shape = a.shape()[..r - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let sa = self.saved(a, "matmul")?;
        let sb = self.saved(b, "matmul")?;
        Ok(self.push(Op::Matmul { a: sa, b: sb, batch, m, k, n }, shape, out))
    }

    /// Projection of the channel axis: `x [.., C] @ w [C, F] -> [.., F]`.
    pub fn pointwise_conv(&mut self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        if w.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "pointwise_conv",
                detail: format!("weight must be [C, F], got {:?}", w.shape()),
            });
        }
        let c = *x.shape().last().ok_or(TensorError::ShapeMismatch {
            op: "pointwise_conv",
            detail: "input has rank 0".into(),
        })?;
        if c != w.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "pointwise_conv",
                detail: format!("channels {} vs weight {:?}", c, w.shape()),
            });
        }
        let rows = x.numel() / c;
        let flat = self.reshape(x, &[rows, c])?;
        let projected = self.matmul(&flat, w)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = w.shape()[1];
        self.reshape(&projected, &shape)
    }
}

/// `out[bt] = a[bt] @ b[bt]`, accumulating in i-k-j order so the innermost
/// loop runs over contiguous rows of `b` and `out`.
pub(crate) fn matmul_into(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f64],
) {
    for bt in 0..batch {
        let ab = &a[bt * m * k..(bt + 1) * m * k];
        let bb = &b[bt * k * n..(bt + 1) * k * n];
        let ob = &mut out[bt * m * n..(bt + 1) * m * n];
        for i in 0..m {
            let arow = &ab[i * k..(i + 1) * k];
            let orow = &mut ob[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &bb[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
    }
}

pub(crate) fn backward_matmul(
    a: &Saved,
    b: &Saved,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    dy: &[f64],
    acc: &mut dyn FnMut(usize, Vec<f64>),
) {
    if let Some(node) = a.node {
        // da = dy @ b^T : row dot row, both contiguous.
        let mut da = vec![0.0; batch * m * k];
        for bt in 0..batch {
            let dyb = &dy[bt * m * n..(bt + 1) * m * n];
            let bb = &b.data[bt * k * n..(bt + 1) * k * n];
            let dab = &mut da[bt * m * k..(bt + 1) * m * k];
            for i in 0..m {
                let dyrow = &dyb[i * n..(i + 1) * n];
                let darow = &mut dab[i * k..(i + 1) * k];
                for (kk, slot) in darow.iter_mut().enumerate() {
                    let brow = &bb[kk * n..(kk + 1) * n];
                    *slot = dyrow.iter().zip(brow.iter()).map(|(x, y)| x * y).sum();
                }
            }
        }
        acc(node, da);
    }
    if let Some(node) = b.node {
        // db = a^T @ dy : axpy rows of dy into rows of db.
        let mut db = vec![0.0; batch * k * n];
        for bt in 0..batch {
            let ab = &a.data[bt * m * k..(bt + 1) * m * k];
            let dyb = &dy[bt * m * n..(bt + 1) * m * n];
            let dbb = &mut db[bt * k * n..(bt + 1) * k * n];
            for i in 0..m {
                let arow = &ab[i * k..(i + 1) * k];
                let dyrow = &dyb[i * n..(i + 1) * n];
                for (kk, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let dbrow = &mut dbb[kk * n..(kk + 1) * n];
                    for (slot, &dv) in dbrow.iter_mut().zip(dyrow.iter()) {
                        *slot += av * dv;
                    }
                }
            }
        }
        acc(node, db);
    }
}
