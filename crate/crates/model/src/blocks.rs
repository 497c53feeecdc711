//! The three computational blocks: convolution steps/blocks, attention
//! with timing signals, and the sparsely-gated mixture of experts.

use mm_tensor::{PadMode, RngStream, Tape, Tensor, TensorError};

use crate::error::{ModelError, Result};
use crate::params::{AttentionParams, ConvBlockParams, ConvStepParams, MoEParams};

/// ReLU -> separable convolution -> layer normalization, in that order.
/// Sequence inputs are `[B, L, C]`; planar inputs `[B, H, W, C]` use the
/// full 2-D kernel.
pub fn conv_step(tape: &mut Tape, p: &ConvStepParams, x: &Tensor, pad: PadMode) -> Result<Tensor> {
    let activated = tape.relu(x)?;
    let dw = tape.param(&p.dw)?;
    let pw = tape.param(&p.pw)?;
    let conv = match x.rank() {
        3 => tape.sep_conv1d(&activated, &dw, &pw, p.stride.0, p.dilation.0, pad)?,
        4 => tape.sep_conv2d(&activated, &dw, &pw, p.stride, p.dilation, pad)?,
        r => {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "conv_step",
                detail: format!("rank {r} input"),
            }))
        }
    };
    let gain = tape.param(&p.gain)?;
    let shift = tape.param(&p.shift)?;
    Ok(tape.layer_norm(&conv, &gain, &shift, p.eps)?)
}

/// Four convolution steps with residual connections from the block input
/// after the second and fourth steps, then dropout when training.
pub fn conv_block(
    tape: &mut Tape,
    p: &ConvBlockParams,
    x: &Tensor,
    pad: PadMode,
    train: bool,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if *x.shape().last().unwrap_or(&0) != p.channels() {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "conv_block",
            detail: format!("{:?} vs block depth {}", x.shape(), p.channels()),
        }));
    }
    let h1 = conv_step(tape, &p.steps[0], x, pad)?;
    let s2 = conv_step(tape, &p.steps[1], &h1, pad)?;
    let h2 = tape.add(&s2, x)?;
    let h3 = conv_step(tape, &p.steps[2], &h2, pad)?;
    let s4 = conv_step(tape, &p.steps[3], &h3, pad)?;
    let h4 = tape.add(&s4, x)?;
    Ok(tape.dropout(&h4, p.dropout, train, rng)?)
}

/// Row `t` of the timing signal, for any (possibly fractional) position:
/// channel pair `(2d, 2d+1)` is `sin(t * delta), cos(t * delta)` with
/// `delta = 1e4^(-2d/depth)`.
pub fn timing_signal_at(t: f64, depth: usize) -> Vec<f64> {
    let mut row = vec![0.0; depth];
    for d in 0..depth / 2 {
        let delta = 1e4_f64.powf(-((2 * d) as f64) / depth as f64);
        row[2 * d] = (t * delta).sin();
        row[2 * d + 1] = (t * delta).cos();
    }
    row
}

/// `[length, depth]` table of interleaved sine/cosine position curves.
pub fn timing_signal(length: usize, depth: usize) -> Result<Tensor> {
    if depth % 2 != 0 {
        return Err(ModelError::Config(format!(
            "timing signal depth {depth} must be even"
        )));
    }
    let mut data = Vec::with_capacity(length * depth);
    for t in 0..length {
        data.extend_from_slice(&timing_signal_at(t as f64, depth));
    }
    Ok(Tensor::new(&[length, depth], data).expect("sin/cos are finite"))
}

/// The target side of an attention block: add the timing signal, then mix
/// with two causal convolution blocks. This is also the whole block in the
/// attention-ablated configuration.
pub fn target_mix(
    tape: &mut Tape,
    p: &AttentionParams,
    target: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let lt = target.shape()[1];
    let timing = timing_signal(lt, p.depth)?;
    let composed = tape.add(target, &timing)?;
    let mixed = conv_block(tape, &p.mix[0], &composed, PadMode::Left, train, rng)?;
    conv_block(tape, &p.mix[1], &mixed, PadMode::Left, train, rng)
}

/// Multi-head dot-product attention from the mixed target onto the source,
/// scaled by `1/sqrt(per-head depth)`; heads are concatenated back to the
/// model depth. The source is fully visible; causality holds on the target
/// side through the left-padded mixing blocks.
pub fn attention_block(
    tape: &mut Tape,
    p: &AttentionParams,
    source: &Tensor,
    target: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let c = p.depth;
    if c % p.heads != 0 {
        return Err(ModelError::Config(format!(
            "depth {c} not divisible by {} heads",
            p.heads
        )));
    }
    if source.shape()[2] != c || target.shape()[2] != c {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "attention_block",
            detail: format!("source {:?} target {:?} depth {c}", source.shape(), target.shape()),
        }));
    }
    let (b, ls) = (source.shape()[0], source.shape()[1]);
    let lt = target.shape()[1];
    let g = p.heads;
    let dh = c / g;

    let mixed = target_mix(tape, p, target, train, rng)?;

    let wq = tape.param(&p.wq)?;
    let wk = tape.param(&p.wk)?;
    let wv = tape.param(&p.wv)?;
    let q = tape.pointwise_conv(&mixed, &wq)?;
    let k = tape.pointwise_conv(source, &wk)?;
    let v = tape.pointwise_conv(source, &wv)?;

    // Split heads: [B, L, C] -> [B, g, L, dh] (keys transposed for scores).
    let qh = tape.reshape(&q, &[b, lt, g, dh])?;
    let qh = tape.permute(&qh, &[0, 2, 1, 3])?;
    let kh = tape.reshape(&k, &[b, ls, g, dh])?;
    let kt = tape.permute(&kh, &[0, 2, 3, 1])?;
    let vh = tape.reshape(&v, &[b, ls, g, dh])?;
    let vh = tape.permute(&vh, &[0, 2, 1, 3])?;

    let scores = tape.matmul(&qh, &kt)?;
    let scaled = tape.scale(&scores, 1.0 / (dh as f64).sqrt())?;
    let attn = tape.softmax(&scaled)?;
    let ctx = tape.matmul(&attn, &vh)?;

    let merged = tape.permute(&ctx, &[0, 2, 1, 3])?;
    Ok(tape.reshape(&merged, &[b, lt, c])?)
}

/// Gate output: the sparse per-token expert weights and the per-expert
/// importance (summed weights).
pub struct GateOut {
    /// `[N, n_experts]`, exactly k nonzeros per row, each row summing to 1.
    pub weights: Tensor,
    /// `[n_experts]`.
    pub importance: Tensor,
}

/// Noisy top-k gating over flattened tokens `[N, C]`. Training adds
/// standard-normal noise scaled by `softplus(x . W_noise)` to the gate
/// logits; the softmax runs over the k surviving logits only, so all other
/// weights are exactly zero.
pub fn moe_gate_flat(
    tape: &mut Tape,
    p: &MoEParams,
    x: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<GateOut> {
    let n = x.shape()[0];
    let e = p.n_experts();
    if p.k == 0 || p.k > e {
        return Err(ModelError::Config(format!("k {} outside 1..={e}", p.k)));
    }
    let wg = tape.param(&p.w_gate)?;
    let clean = tape.matmul(x, &wg)?;
    let logits = if train {
        let wn = tape.param(&p.w_noise)?;
        let raw = tape.matmul(x, &wn)?;
        let spread = tape.softplus(&raw)?;
        let draws: Vec<f64> = (0..n * e).map(|_| rng.next_normal()).collect();
        let noise = Tensor::new(&[n, e], draws).expect("normal draws are finite");
        let scaled_noise = tape.mul(&spread, &noise)?;
        tape.add(&clean, &scaled_noise)?
    } else {
        clean
    };

    // Top-k selection happens on values; ties break toward lower indices.
    let mut mask = vec![0.0; n * e];
    for row in 0..n {
        let vals = &logits.data()[row * e..(row + 1) * e];
        let mut order: Vec<usize> = (0..e).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        for &idx in order.iter().take(p.k) {
            mask[row * e + idx] = 1.0;
        }
    }
    let mask = Tensor::new(&[n, e], mask).expect("mask is finite");
    let weights = tape.masked_softmax(&logits, &mask)?;
    let importance = tape.sum_axis0(&weights)?;
    Ok(GateOut { weights, importance })
}

/// Gate over `[B, L, C]`, returning `[B, L, n_experts]` weights.
pub fn moe_gate(
    tape: &mut Tape,
    p: &MoEParams,
    x: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<GateOut> {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let flat = tape.reshape(x, &[b * l, c])?;
    let out = moe_gate_flat(tape, p, &flat, train, rng)?;
    let weights = tape.reshape(&out.weights, &[b, l, p.n_experts()])?;
    Ok(GateOut { weights, importance: out.importance })
}

/// Mixture layer: only the selected experts run, each on its own token
/// subset; outputs are combined with the gate weights. The balance cost is
/// `w_balance * CV(importance)^2`.
pub fn moe_layer(
    tape: &mut Tape,
    p: &MoEParams,
    x: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = b * l;
    let e_count = p.n_experts();
    let flat = tape.reshape(x, &[n, c])?;
    let gate = moe_gate_flat(tape, p, &flat, train, rng)?;

    let mut combined: Option<Tensor> = None;
    for (e, expert) in p.experts.iter().enumerate() {
        let rows: Vec<usize> = (0..n)
            .filter(|row| gate.weights.data()[row * e_count + e] != 0.0)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let xe = tape.gather_rows(&flat, &rows)?;
        let w1 = tape.param(&expert.w1)?;
        let b1 = tape.param(&expert.b1)?;
        let w2 = tape.param(&expert.w2)?;
        let b2 = tape.param(&expert.b2)?;
        let h = tape.matmul(&xe, &w1)?;
        let h = tape.add(&h, &b1)?;
        let h = tape.relu(&h)?;
        let y = tape.matmul(&h, &w2)?;
        let y = tape.add(&y, &b2)?;
        let cols = vec![e; rows.len()];
        let ge = tape.gather_cells(&gate.weights, &rows, &cols)?;
        let weighted = tape.scale_rows(&y, &ge)?;
        let scattered = tape.scatter_rows(&weighted, &rows, n)?;
        combined = Some(match combined {
            Some(acc) => tape.add(&acc, &scattered)?,
            None => scattered,
        });
    }
    let combined = combined.expect("k >= 1 guarantees at least one expert runs");
    let out = tape.reshape(&combined, &[b, l, c])?;

    let cost = balance_cost(tape, &gate.importance, e_count, p.w_balance)?;
    Ok((out, cost))
}

/// `w_balance * (population std / mean)^2` of the importance vector.
fn balance_cost(tape: &mut Tape, importance: &Tensor, e: usize, w_balance: f64) -> Result<Tensor> {
    let mean = tape.mean_all(importance)?;
    let centered = tape.sub(importance, &mean)?;
    let sq = tape.mul(&centered, &centered)?;
    let sq_sum = tape.sum_all(&sq)?;
    let var = tape.scale(&sq_sum, 1.0 / e as f64)?;
    let mean_sq = tape.mul(&mean, &mean)?;
    let cv2 = tape.div(&var, &mean_sq)?;
    Ok(tape.scale(&cv2, w_balance)?)
}
