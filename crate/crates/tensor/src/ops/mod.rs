//! Differentiable operations: forward builders grouped by theme, plus the
//! backward rule for every recorded op.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod matmul;
pub(crate) mod shape;
pub(crate) mod softmax;

use crate::tape::{Broadcast, Node, Op, Saved};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Routes a gradient contribution to an input slot, skipping constants.
#[inline]
fn give<F>(acc: &mut dyn FnMut(usize, Vec<f64>), slot: &Saved, f: F)
where
    F: FnOnce() -> Vec<f64>,
{
    if let Some(node) = slot.node {
        acc(node, f());
    }
}

/// Applies one node's backward rule, pushing per-input contributions into
/// `acc(input_node, gradient)`.
pub(crate) fn backward_op(node: &Node, dy: &[f64], acc: &mut dyn FnMut(usize, Vec<f64>)) {
    match &node.op {
        Op::Leaf => unreachable!("leaf handled by the driver"),

        Op::Add { a, b, bcast } => {
            give(acc, a, || dy.to_vec());
            give(acc, b, || reduce_broadcast(dy, b.data.len(), *bcast));
        }

        Op::Mul { a, b, bcast } => {
            match bcast {
                Broadcast::Same => {
                    give(acc, a, || {
                        dy.iter().zip(b.data.iter()).map(|(d, v)| d * v).collect()
                    });
                    give(acc, b, || {
                        dy.iter().zip(a.data.iter()).map(|(d, v)| d * v).collect()
                    });
                }
                Broadcast::Scalar => {
                    let s = b.data[0];
                    give(acc, a, || dy.iter().map(|d| d * s).collect());
                    give(acc, b, || {
                        vec![dy.iter().zip(a.data.iter()).map(|(d, v)| d * v).sum()]
                    });
                }
                Broadcast::Suffix => unreachable!("mul has no suffix broadcast"),
            }
        }

        Op::Div { a, b, bcast } => match bcast {
            Broadcast::Same => {
                give(acc, a, || {
                    dy.iter().zip(b.data.iter()).map(|(d, v)| d / v).collect()
                });
                give(acc, b, || {
                    dy.iter()
                        .zip(a.data.iter().zip(b.data.iter()))
                        .map(|(d, (av, bv))| -d * av / (bv * bv))
                        .collect()
                });
            }
            Broadcast::Scalar => {
                let s = b.data[0];
                give(acc, a, || dy.iter().map(|d| d / s).collect());
                give(acc, b, || {
                    vec![dy
                        .iter()
                        .zip(a.data.iter())
                        .map(|(d, av)| -d * av / (s * s))
                        .sum()]
                });
            }
            Broadcast::Suffix => unreachable!("div has no suffix broadcast"),
        },

        Op::Scale { x, c } => {
            give(acc, x, || dy.iter().map(|d| d * c).collect());
        }

        Op::Matmul { a, b, batch, m, k, n } => {
            matmul::backward_matmul(a, b, *batch, *m, *k, *n, dy, acc);
        }

        Op::Relu { x } => {
            give(acc, x, || {
                dy.iter()
                    .zip(x.data.iter())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect()
            });
        }

        Op::Softplus { x } => {
            give(acc, x, || {
                dy.iter()
                    .zip(x.data.iter())
                    .map(|(d, v)| d * sigmoid(*v))
                    .collect()
            });
        }

        Op::Softmax { x } => {
            // Masked rows carry exact zeros in the saved output, which
            // zeroes their slots here as well.
            give(acc, x, || {
                let y = node.out.as_slice();
                let cols = *x.shape.last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let o = r * cols;
                    let yr = &y[o..o + cols];
                    let dr = &dy[o..o + cols];
                    let s: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for ((slot, yv), dv) in dx[o..o + cols].iter_mut().zip(yr).zip(dr) {
                        *slot = yv * (dv - s);
                    }
                }
                dx
            });
        }

        Op::LogSoftmax { x } => {
            give(acc, x, || {
                let y = node.out.as_slice();
                let cols = *x.shape.last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let o = r * cols;
                    let s: f64 = dy[o..o + cols].iter().sum();
                    for ((slot, yv), dv) in
                        dx[o..o + cols].iter_mut().zip(&y[o..o + cols]).zip(&dy[o..o + cols])
                    {
                        *slot = dv - yv.exp() * s;
                    }
                }
                dx
            });
        }

        Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
            let cols = gain.data.len();
            let rows = x.data.len() / cols;
            give(acc, gain, || {
                let mut dg = vec![0.0; cols];
                for r in 0..rows {
                    let o = r * cols;
                    for c in 0..cols {
                        dg[c] += dy[o + c] * xhat[o + c];
                    }
                }
                dg
            });
            give(acc, shift, || {
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    let o = r * cols;
                    for c in 0..cols {
                        db[c] += dy[o + c];
                    }
                }
                db
            });
            give(acc, x, || {
                let g = gain.data.as_slice();
                let mut dx = vec![0.0; x.data.len()];
                let inv_c = 1.0 / cols as f64;
                for r in 0..rows {
                    let o = r * cols;
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..cols {
                        let dxh = dy[o + c] * g[c];
                        m1 += dxh;
                        m2 += dxh * xhat[o + c];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    let inv = inv_std[r];
                    for c in 0..cols {
                        let dxh = dy[o + c] * g[c];
                        dx[o + c] = inv * (dxh - m1 - xhat[o + c] * m2);
                    }
                }
                dx
            });
        }

        Op::DepthwiseConv2d { x, w, geom } => {
            conv::backward_depthwise(x, w, geom, dy, acc);
        }

        Op::MaxPool2d { x, argmax } => {
            give(acc, x, || {
                let mut dx = vec![0.0; x.data.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += dy[o];
                }
                dx
            });
        }

        Op::GlobalAvgPool { x } => {
            give(acc, x, || {
                let batch = x.shape[0];
                let cols = *x.shape.last().unwrap();
                let spatial = x.data.len() / (batch * cols);
                let inv = 1.0 / spatial as f64;
                let mut dx = vec![0.0; x.data.len()];
                for b in 0..batch {
                    for s in 0..spatial {
                        let o = (b * spatial + s) * cols;
                        for c in 0..cols {
                            dx[o + c] = dy[b * cols + c] * inv;
                        }
                    }
                }
                dx
            });
        }

        Op::Embedding { table, ids } => {
            give(acc, table, || {
                let width = table.shape[1];
                let mut dt = vec![0.0; table.data.len()];
                for (row, &id) in ids.iter().enumerate() {
                    let src = row * width;
                    let dst = id * width;
                    for c in 0..width {
                        dt[dst + c] += dy[src + c];
                    }
                }
                dt
            });
        }

        Op::Concat { parts, axis } => {
            let out_shape = &node.out_shape;
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let total_axis = out_shape[*axis];
            let mut offset = 0;
            for part in parts {
                let extent = part.shape[*axis];
                if part.node.is_some() {
                    let mut dp = vec![0.0; part.data.len()];
                    for o in 0..outer {
                        for e in 0..extent {
                            let src = (o * total_axis + offset + e) * inner;
                            let dst = (o * extent + e) * inner;
                            dp[dst..dst + inner].copy_from_slice(&dy[src..src + inner]);
                        }
                    }
                    give(acc, part, || dp);
                }
                offset += extent;
            }
        }

        Op::Reshape { x } => {
            give(acc, x, || dy.to_vec());
        }

        Op::Permute { x, perm } => {
            give(acc, x, || {
                // dx = dy permuted by the inverse permutation, which is the
                // same as scattering: dx[src] = dy[dst].
                shape::permute_data(dy, &node.out_shape, &shape::inverse_perm(perm))
            });
        }

        Op::GatherRows { x, rows } => {
            give(acc, x, || {
                let stride = x.data.len() / x.shape[0];
                let mut dx = vec![0.0; x.data.len()];
                for (m, &r) in rows.iter().enumerate() {
                    let src = m * stride;
                    let dst = r * stride;
                    for c in 0..stride {
                        dx[dst + c] += dy[src + c];
                    }
                }
                dx
            });
        }

        Op::ScatterRows { x, rows } => {
            give(acc, x, || {
                let stride = x.data.len() / x.shape[0];
                let mut dx = vec![0.0; x.data.len()];
                for (m, &r) in rows.iter().enumerate() {
                    let src = r * stride;
                    let dst = m * stride;
                    dx[dst..dst + stride].copy_from_slice(&dy[src..src + stride]);
                }
                dx
            });
        }

        Op::GatherCells { x, rows, cols } => {
            give(acc, x, || {
                let width = x.shape[1];
                let mut dx = vec![0.0; x.data.len()];
                for (m, (&r, &c)) in rows.iter().zip(cols.iter()).enumerate() {
                    dx[r * width + c] += dy[m];
                }
                dx
            });
        }

        Op::ScaleRows { x, s } => {
            let rows = x.shape[0];
            let stride = x.data.len() / rows;
            give(acc, x, || {
                let mut dx = vec![0.0; x.data.len()];
                for r in 0..rows {
                    let o = r * stride;
                    let sv = s.data[r];
                    for c in 0..stride {
                        dx[o + c] = dy[o + c] * sv;
                    }
                }
                dx
            });
            give(acc, s, || {
                let mut ds = vec![0.0; rows];
                for r in 0..rows {
                    let o = r * stride;
                    ds[r] = dy[o..o + stride]
                        .iter()
                        .zip(&x.data[o..o + stride])
                        .map(|(d, v)| d * v)
                        .sum();
                }
                ds
            });
        }

        Op::SumAll { x } => {
            give(acc, x, || vec![dy[0]; x.data.len()]);
        }

        Op::SumAxis0 { x } => {
            give(acc, x, || {
                let cols = x.shape[1];
                let rows = x.shape[0];
                let mut dx = vec![0.0; x.data.len()];
                for r in 0..rows {
                    dx[r * cols..(r + 1) * cols].copy_from_slice(&dy[..cols]);
                }
                dx
            });
        }
    }
}

/// Reduces a full-shape gradient onto a broadcast right operand.
fn reduce_broadcast(dy: &[f64], b_len: usize, bcast: Broadcast) -> Vec<f64> {
    match bcast {
        Broadcast::Same => dy.to_vec(),
        Broadcast::Scalar => vec![dy.iter().sum()],
        Broadcast::Suffix => {
            let mut db = vec![0.0; b_len];
            for chunk in dy.chunks_exact(b_len) {
                for (d, c) in db.iter_mut().zip(chunk.iter()) {
                    *d += c;
                }
            }
            db
        }
    }
}
