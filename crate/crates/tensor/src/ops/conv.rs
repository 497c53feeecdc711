//! Depthwise-separable convolution, pooling.
//!
//! Layout is channels-last throughout: sequences are `[B, L, C]`, planar
//! data `[B, H, W, C]`. A sequence is convolved as a width-1 plane, so one
//! kernel serves both.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tape::{ConvGeom, Op, Saved, Tape};
use crate::tensor::Tensor;

/// How a convolution pads its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// TensorFlow-style SAME: output extent `ceil(in/stride)`, padding split
    /// evenly with the surplus at the end.
    Same,
    /// Causal: the full `(k-1)*dilation` padding sits before position 0, so
    /// output `t` depends only on inputs at positions `<= t`.
    Left,
}

fn pad_for(mode: PadMode, extent: usize, k: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let eff_k = (k - 1) * dilation + 1;
    let out = extent.div_ceil(stride);
    match mode {
        PadMode::Same => {
            let total = ((out - 1) * stride + eff_k).saturating_sub(extent);
            (total / 2, out)
        }
        PadMode::Left => ((k - 1) * dilation, out),
    }
}

impl Tape {
    /// Per-channel 2-D convolution: `x [B,H,W,C]` with kernel `[kh,kw,C]`.
    pub fn depthwise_conv2d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        stride: (usize, usize),
        dilation: (usize, usize),
        pad: PadMode,
    ) -> Result<Tensor> {
        if x.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                detail: format!("input must be [B,H,W,C], got {:?}", x.shape()),
            });
        }
        if w.rank() != 3 || w.shape()[2] != x.shape()[3] {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                detail: format!("kernel {:?} vs input {:?}", w.shape(), x.shape()),
            });
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_conv2d",
                detail: "stride and dilation must be positive".into(),
            });
        }
        let (batch, in_h, in_w, channels) =
            (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw) = (w.shape()[0], w.shape()[1]);
        let (pad_top, out_h) = pad_for(pad, in_h, kh, stride.0, dilation.0);
        let (pad_left, out_w) = pad_for(pad, in_w, kw, stride.1, dilation.1);
        let geom = ConvGeom {
            batch,
            in_h,
            in_w,
            channels,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            dh: dilation.0,
            dw: dilation.1,
            pad_top,
            pad_left,
            out_h,
            out_w,
        };

        let mut out = vec![0.0; batch * out_h * out_w * channels];
        depthwise_forward(x.data(), w.data(), &geom, &mut out);

        let sx = self.saved(x, "depthwise_conv2d")?;
        let sw = self.saved(w, "depthwise_conv2d")?;
        Ok(self.push(
            Op::DepthwiseConv2d { x: sx, w: sw, geom },
            vec![batch, out_h, out_w, channels],
            out,
        ))
    }

    /// Depthwise-separable 2-D convolution: per-channel convolution with
    /// `depthwise [kh,kw,C]` followed by a pointwise mix `[C, F]`.
    pub fn sep_conv2d(
        &mut self,
        x: &Tensor,
        depthwise: &Tensor,
        pointwise: &Tensor,
        stride: (usize, usize),
        dilation: (usize, usize),
        pad: PadMode,
    ) -> Result<Tensor> {
        let mid = self.depthwise_conv2d(x, depthwise, stride, dilation, pad)?;
        self.pointwise_conv(&mid, pointwise)
    }

    /// Sequence form of the separable convolution: `x [B,L,C]` with a
    /// depthwise kernel `[h,1,C]` and pointwise `[C,F]`.
    pub fn sep_conv1d(
        &mut self,
        x: &Tensor,
        depthwise: &Tensor,
        pointwise: &Tensor,
        stride: usize,
        dilation: usize,
        pad: PadMode,
    ) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "sep_conv1d",
                detail: format!("input must be [B,L,C], got {:?}", x.shape()),
            });
        }
        let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let plane = self.reshape(x, &[b, l, 1, c])?;
        let out = self.sep_conv2d(&plane, depthwise, pointwise, (stride, 1), (dilation, 1), pad)?;
        let (ol, f) = (out.shape()[1], out.shape()[3]);
        self.reshape(&out, &[b, ol, f])
    }

    /// Max pooling with SAME padding; padded positions never win.
    pub fn max_pool2d(
        &mut self,
        x: &Tensor,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Tensor> {
        if x.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "max_pool2d",
                detail: format!("input must be [B,H,W,C], got {:?}", x.shape()),
            });
        }
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "max_pool2d",
                detail: "window and stride must be positive".into(),
            });
        }
        let (batch, in_h, in_w, channels) =
            (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (pad_top, out_h) = pad_for(PadMode::Same, in_h, window.0, stride.0, 1);
        let (pad_left, out_w) = pad_for(PadMode::Same, in_w, window.1, stride.1, 1);

        let xd = x.data();
        let numel_out = batch * out_h * out_w * channels;
        let mut out = vec![0.0; numel_out];
        let mut argmax = vec![0usize; numel_out];
        for b in 0..batch {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let dst = ((b * out_h + oh) * out_w + ow) * channels;
                    for c in 0..channels {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_src = usize::MAX;
                        for u in 0..window.0 {
                            let ih = (oh * stride.0 + u) as isize - pad_top as isize;
                            if ih < 0 || ih as usize >= in_h {
                                continue;
                            }
                            for v in 0..window.1 {
                                let iw = (ow * stride.1 + v) as isize - pad_left as isize;
                                if iw < 0 || iw as usize >= in_w {
                                    continue;
                                }
                                let src =
                                    ((b * in_h + ih as usize) * in_w + iw as usize) * channels + c;
                                if xd[src] > best {
                                    best = xd[src];
                                    best_src = src;
                                }
                            }
                        }
                        out[dst + c] = best;
                        argmax[dst + c] = best_src;
                    }
                }
            }
        }

        let sx = self.saved(x, "max_pool2d")?;
        Ok(self.push(
            Op::MaxPool2d { x: sx, argmax: Arc::new(argmax) },
            vec![batch, out_h, out_w, channels],
            out,
        ))
    }

    /// Mean over every axis between the first (batch) and last (channels):
    /// `[B, .., C] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 3 {
            return Err(TensorError::ShapeMismatch {
                op: "global_avg_pool",
                detail: format!("need batch, spatial and channel axes, got {:?}", x.shape()),
            });
        }
        let batch = x.shape()[0];
        let channels = *x.shape().last().unwrap();
        let spatial = x.numel() / (batch * channels);
        let inv = 1.0 / spatial as f64;
        let mut out = vec![0.0; batch * channels];
        for b in 0..batch {
            for s in 0..spatial {
                let o = (b * spatial + s) * channels;
                for c in 0..channels {
                    out[b * channels + c] += x.data()[o + c] * inv;
                }
            }
        }
        let sx = self.saved(x, "global_avg_pool")?;
        Ok(self.push(Op::GlobalAvgPool { x: sx }, vec![batch, channels], out))
    }
}

fn depthwise_forward(x: &[f64], w: &[f64], g: &ConvGeom, out: &mut [f64]) {
    for b in 0..g.batch {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let dst = ((b * g.out_h + oh) * g.out_w + ow) * g.channels;
                let orow = &mut out[dst..dst + g.channels];
                for u in 0..g.kh {
                    let ih = (oh * g.sh + u * g.dh) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.in_h {
                        continue;
                    }
                    for v in 0..g.kw {
                        let iw = (ow * g.sw + v * g.dw) as isize - g.pad_left as isize;
                        if iw < 0 || iw as usize >= g.in_w {
                            continue;
                        }
                        let src = ((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.channels;
                        let xrow = &x[src..src + g.channels];
                        let wrow = &w[(u * g.kw + v) * g.channels..(u * g.kw + v + 1) * g.channels];
                        for ((o, xv), wv) in orow.iter_mut().zip(xrow.iter()).zip(wrow.iter()) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn backward_depthwise(
    x: &Saved,
    w: &Saved,
    g: &ConvGeom,
    dy: &[f64],
    acc: &mut dyn FnMut(usize, Vec<f64>),
) {
    if let Some(node) = x.node {
        let wd = w.data.as_slice();
        let mut dx = vec![0.0; x.data.len()];
        for b in 0..g.batch {
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let dst = ((b * g.out_h + oh) * g.out_w + ow) * g.channels;
                    let dyrow = &dy[dst..dst + g.channels];
                    for u in 0..g.kh {
                        let ih = (oh * g.sh + u * g.dh) as isize - g.pad_top as isize;
                        if ih < 0 || ih as usize >= g.in_h {
                            continue;
                        }
                        for v in 0..g.kw {
                            let iw = (ow * g.sw + v * g.dw) as isize - g.pad_left as isize;
                            if iw < 0 || iw as usize >= g.in_w {
                                continue;
                            }
                            let src =
                                ((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.channels;
                            let wrow =
                                &wd[(u * g.kw + v) * g.channels..(u * g.kw + v + 1) * g.channels];
                            let dxrow = &mut dx[src..src + g.channels];
                            for ((o, dv), wv) in dxrow.iter_mut().zip(dyrow.iter()).zip(wrow.iter())
                            {
                                *o += dv * wv;
                            }
                        }
                    }
                }
            }
        }
        acc(node, dx);
    }
    if let Some(node) = w.node {
        let xd = x.data.as_slice();
        let mut dw = vec![0.0; w.data.len()];
        for b in 0..g.batch {
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let dst = ((b * g.out_h + oh) * g.out_w + ow) * g.channels;
                    let dyrow = &dy[dst..dst + g.channels];
                    for u in 0..g.kh {
                        let ih = (oh * g.sh + u * g.dh) as isize - g.pad_top as isize;
                        if ih < 0 || ih as usize >= g.in_h {
                            continue;
                        }
                        for v in 0..g.kw {
                            let iw = (ow * g.sw + v * g.dw) as isize - g.pad_left as isize;
                            if iw < 0 || iw as usize >= g.in_w {
                                continue;
                            }
                            let src =
                                ((b * g.in_h + ih as usize) * g.in_w + iw as usize) * g.channels;
                            let xrow = &xd[src..src + g.channels];
                            let dwrow = &mut dw
                                [(u * g.kw + v) * g.channels..(u * g.kw + v + 1) * g.channels];
                            for ((o, dv), xv) in dwrow.iter_mut().zip(dyrow.iter()).zip(xrow.iter())
                            {
                                *o += dv * xv;
                            }
                        }
                    }
                }
            }
        }
        acc(node, dw);
    }
}
