//! Shape manipulation, indexing and reductions.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tape::{Op, Tape};
use crate::tensor::Tensor;

impl Tape {
    /// Reinterprets the element order under a new shape; zero-copy.
    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", x.shape(), shape),
            });
        }
        let sx = self.saved(x, "reshape")?;
        let data = x.data_arc();
        Ok(self.push_shared(Op::Reshape { x: sx }, shape.to_vec(), data))
    }

    /// Reorders axes by `perm` (a permutation of `0..rank`).
    pub fn permute(&mut self, x: &Tensor, perm: &[usize]) -> Result<Tensor> {
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                detail: format!("{perm:?} is not a permutation of 0..{rank}"),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
        let data = permute_data(x.data(), x.shape(), perm);
        let sx = self.saved(x, "permute")?;
        Ok(self.push(Op::Permute { x: sx, perm: perm.to_vec() }, out_shape, data))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut out_shape = first.shape().to_vec();
        for p in &parts[1..] {
            if p.rank() != rank
                || p.shape()[..axis] != first.shape()[..axis]
                || p.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} on axis {axis}", first.shape(), p.shape()),
                });
            }
            out_shape[axis] += p.shape()[axis];
        }

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut data = vec![0.0; outer * total_axis * inner];
        let mut offset = 0;
        for p in parts {
            let extent = p.shape()[axis];
            for o in 0..outer {
                let src = o * extent * inner;
                let dst = (o * total_axis + offset) * inner;
                data[dst..dst + extent * inner]
                    .copy_from_slice(&p.data()[src..src + extent * inner]);
            }
            offset += extent;
        }

        let saved = parts
            .iter()
            .map(|p| self.saved(p, "concat"))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.push(Op::Concat { parts: saved, axis }, out_shape, data))
    }

    /// Looks up rows of `table [V, C]` by token id; `ids_shape` gives the
    /// leading output shape.
    pub fn embedding(&mut self, table: &Tensor, ids: &[usize], ids_shape: &[usize]) -> Result<Tensor> {
        if table.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                detail: format!("table must be [V, C], got {:?}", table.shape()),
            });
        }
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                detail: format!("{} ids vs shape {ids_shape:?}", ids.len()),
            });
        }
        let (vocab, width) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                bound: vocab,
            });
        }
        let mut data = vec![0.0; ids.len() * width];
        for (row, &id) in ids.iter().enumerate() {
            data[row * width..(row + 1) * width]
                .copy_from_slice(&table.data()[id * width..(id + 1) * width]);
        }
        let mut out_shape = ids_shape.to_vec();
        out_shape.push(width);
        let st = self.saved(table, "embedding")?;
        Ok(self.push(
            Op::Embedding { table: st, ids: Arc::new(ids.to_vec()) },
            out_shape,
            data,
        ))
    }

    /// Selects rows of a 2-D tensor; duplicate row indices are allowed.
    pub fn gather_rows(&mut self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        let (n, stride) = first_axis(x, "gather_rows")?;
        if rows.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                detail: "empty row list".into(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: bad, bound: n });
        }
        let mut data = vec![0.0; rows.len() * stride];
        for (m, &r) in rows.iter().enumerate() {
            data[m * stride..(m + 1) * stride]
                .copy_from_slice(&x.data()[r * stride..(r + 1) * stride]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        let sx = self.saved(x, "gather_rows")?;
        Ok(self.push(Op::GatherRows { x: sx, rows: Arc::new(rows.to_vec()) }, shape, data))
    }

    /// Scatters `x`'s rows into a zero tensor with `n_out` rows, adding on
    /// duplicate targets.
    pub fn scatter_rows(&mut self, x: &Tensor, rows: &[usize], n_out: usize) -> Result<Tensor> {
        let (m, stride) = first_axis(x, "scatter_rows")?;
        if rows.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("{} rows for {} sources", rows.len(), m),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_out) {
            return Err(TensorError::IndexOutOfRange {
                op: "scatter_rows",
                index: bad,
                bound: n_out,
            });
        }
        let mut data = vec![0.0; n_out * stride];
        for (src, &r) in rows.iter().enumerate() {
            let s = src * stride;
            let d = r * stride;
            for c in 0..stride {
                data[d + c] += x.data()[s + c];
            }
        }
        let mut shape = x.shape().to_vec();
        shape[0] = n_out;
        let sx = self.saved(x, "scatter_rows")?;
        Ok(self.push(Op::ScatterRows { x: sx, rows: Arc::new(rows.to_vec()) }, shape, data))
    }

    /// Picks one cell per listed (row, col) pair from a 2-D tensor.
    pub fn gather_cells(&mut self, x: &Tensor, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_cells",
                detail: format!("need 2-D input, got {:?}", x.shape()),
            });
        }
        if rows.len() != cols.len() || rows.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "gather_cells",
                detail: "row/col lists must be equal-length and nonempty".into(),
            });
        }
        let (n, e) = (x.shape()[0], x.shape()[1]);
        let mut data = vec![0.0; rows.len()];
        for (m, (&r, &c)) in rows.iter().zip(cols.iter()).enumerate() {
            if r >= n {
                return Err(TensorError::IndexOutOfRange { op: "gather_cells", index: r, bound: n });
            }
            if c >= e {
                return Err(TensorError::IndexOutOfRange { op: "gather_cells", index: c, bound: e });
            }
            data[m] = x.data()[r * e + c];
        }
        let sx = self.saved(x, "gather_cells")?;
        Ok(self.push(
            Op::GatherCells {
                x: sx,
                rows: Arc::new(rows.to_vec()),
                cols: Arc::new(cols.to_vec()),
            },
            vec![rows.len()],
            data,
        ))
    }

    /// Scales row `i` of `x` by `s[i]`.
    pub fn scale_rows(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let (n, stride) = first_axis(x, "scale_rows")?;
        if s.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                detail: format!("{:?} vs {} rows", s.shape(), n),
            });
        }
        let mut data = vec![0.0; x.numel()];
        for r in 0..n {
            let o = r * stride;
            let sv = s.data()[r];
            for c in 0..stride {
                data[o + c] = x.data()[o + c] * sv;
            }
        }
        let sx = self.saved(x, "scale_rows")?;
        let ss = self.saved(s, "scale_rows")?;
        Ok(self.push(Op::ScaleRows { x: sx, s: ss }, x.shape().to_vec(), data))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: &Tensor) -> Result<Tensor> {
        let sx = self.saved(x, "sum_all")?;
        let total = x.data().iter().sum();
        Ok(self.push(Op::SumAll { x: sx }, vec![1], vec![total]))
    }

    /// Mean of every element, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel() as f64;
        let s = self.sum_all(x)?;
        self.scale(&s, 1.0 / n)
    }

    /// Column sums of a 2-D tensor: `[N, E] -> [E]`.
    pub fn sum_axis0(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "sum_axis0",
                detail: format!("need 2-D input, got {:?}", x.shape()),
            });
        }
        let (n, e) = (x.shape()[0], x.shape()[1]);
        let mut data = vec![0.0; e];
        for r in 0..n {
            for c in 0..e {
                data[c] += x.data()[r * e + c];
            }
        }
        let sx = self.saved(x, "sum_axis0")?;
        Ok(self.push(Op::SumAxis0 { x: sx }, vec![e], data))
    }
}

fn first_axis(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if x.rank() < 1 {
        return Err(TensorError::ShapeMismatch { op, detail: "rank-0 tensor".into() });
    }
    let n = x.shape()[0];
    Ok((n, x.numel() / n))
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Materializes `x` with axes reordered by `perm`.
pub(crate) fn permute_data(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();

    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    // Stride in the input for each output axis.
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    let mut out = vec![0.0; x.len()];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out.iter_mut() {
        *slot = x[src];
        // Odometer increment over the output index space.
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            src += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            src -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    out
}
