//! Naive reference implementations used as independent test oracles.
//!
//! Everything here is written as plain loops from the operation's
//! definition and shares no code with the tape kernels it checks.

use crate::ops::conv::PadMode;

/// Direct triple-loop depthwise-separable convolution over `[B,H,W,C]`:
/// a convolution on each channel separately, then a 1x1 mix to `f` outputs.
/// Padding arithmetic is recomputed here from first principles.
#[allow(clippy::too_many_arguments)]
pub fn naive_sep_conv2d(
    x: &[f64],
    (batch, in_h, in_w, channels): (usize, usize, usize, usize),
    dw: &[f64],
    (kh, kw): (usize, usize),
    pw: &[f64],
    filters: usize,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: PadMode,
) -> (Vec<f64>, (usize, usize)) {
    let pad_begin = |extent: usize, k: usize, s: usize, d: usize| -> (usize, usize) {
        let eff = (k - 1) * d + 1;
        let out = (extent + s - 1) / s;
        match pad {
            PadMode::Same => {
                let total = ((out - 1) * s + eff).saturating_sub(extent);
                (total / 2, out)
            }
            PadMode::Left => ((k - 1) * d, out),
        }
    };
    let (pt, out_h) = pad_begin(in_h, kh, stride.0, dilation.0);
    let (pl, out_w) = pad_begin(in_w, kw, stride.1, dilation.1);

    // Stage 1: per-channel spatial convolution.
    let mut mid = vec![0.0; batch * out_h * out_w * channels];
    for b in 0..batch {
        for oh in 0..out_h {
            for ow in 0..out_w {
                for c in 0..channels {
                    let mut acc = 0.0;
                    for u in 0..kh {
                        for v in 0..kw {
                            let ih = (oh * stride.0 + u * dilation.0) as isize - pt as isize;
                            let iw = (ow * stride.1 + v * dilation.1) as isize - pl as isize;
                            if ih < 0 || iw < 0 || ih as usize >= in_h || iw as usize >= in_w {
                                continue;
                            }
                            let xv = x[((b * in_h + ih as usize) * in_w + iw as usize) * channels + c];
                            acc += xv * dw[(u * kw + v) * channels + c];
                        }
                    }
                    mid[((b * out_h + oh) * out_w + ow) * channels + c] = acc;
                }
            }
        }
    }

    // Stage 2: pointwise mix to the output depth.
    let mut out = vec![0.0; batch * out_h * out_w * filters];
    for p in 0..batch * out_h * out_w {
        for f in 0..filters {
            let mut acc = 0.0;
            for c in 0..channels {
                acc += mid[p * channels + c] * pw[c * filters + f];
            }
            out[p * filters + f] = acc;
        }
    }
    (out, (out_h, out_w))
}

/// Sequence wrapper: `[B, L, C]` with kernel `[h, 1, C]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_sep_conv1d(
    x: &[f64],
    (batch, len, channels): (usize, usize, usize),
    dw: &[f64],
    kh: usize,
    pw: &[f64],
    filters: usize,
    stride: usize,
    dilation: usize,
    pad: PadMode,
) -> (Vec<f64>, usize) {
    let (out, (out_h, _)) = naive_sep_conv2d(
        x,
        (batch, len, 1, channels),
        dw,
        (kh, 1),
        pw,
        filters,
        (stride, 1),
        (dilation, 1),
        pad,
    );
    (out, out_h)
}

/// Dense mixture of two-layer ReLU feed-forward experts: every expert runs
/// on every token, combined with the given per-token weights.
/// `x` is `[N, C]`, expert `e` has `w1 [C, H]`, `b1 [H]`, `w2 [H, C]`,
/// `b2 [C]`, and `weights` is `[N, E]` row-major.
pub fn naive_dense_moe(
    x: &[f64],
    n: usize,
    c: usize,
    experts: &[(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)],
    hidden: usize,
    weights: &[f64],
) -> Vec<f64> {
    let e_count = experts.len();
    let mut out = vec![0.0; n * c];
    for token in 0..n {
        let xrow = &x[token * c..(token + 1) * c];
        for (e, (w1, b1, w2, b2)) in experts.iter().enumerate() {
            let gate = weights[token * e_count + e];
            let mut h = vec![0.0; hidden];
            for (j, hv) in h.iter_mut().enumerate() {
                let mut acc = b1[j];
                for i in 0..c {
                    acc += xrow[i] * w1[i * hidden + j];
                }
                *hv = acc.max(0.0);
            }
            for j in 0..c {
                let mut acc = b2[j];
                for (i, hv) in h.iter().enumerate() {
                    acc += hv * w2[i * c + j];
                }
                out[token * c + j] += gate * acc;
            }
        }
    }
    out
}
