//! Parameter containers and seeded initialization.
//!
//! Every parameter gets its stream from the (seed, name) pair, so the
//! initial values are independent of construction order. Output
//! projections start at zero, which makes an untrained model predict the
//! uniform distribution exactly.

use mm_tensor::{Param, RngStream, Tensor};

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Seeded parameter factory.
#[derive(Debug, Clone, Copy)]
pub struct ParamInit {
    pub seed: u64,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit { seed }
    }

    pub fn normal(&self, name: &str, shape: &[usize], sigma: f64) -> Param {
        let mut rng = RngStream::new(self.seed).derive(fnv1a(name));
        Param::new(name, Tensor::randn(shape, sigma, &mut rng))
    }

    /// He-style scale for layers preceded by a ReLU.
    pub fn he(&self, name: &str, shape: &[usize], fan_in: usize) -> Param {
        self.normal(name, shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn zeros(&self, name: &str, shape: &[usize]) -> Param {
        Param::new(name, Tensor::zeros(shape))
    }

    pub fn ones(&self, name: &str, shape: &[usize]) -> Param {
        Param::new(name, Tensor::ones(shape))
    }
}

/// Uniform traversal over a structure's parameters, in a fixed order.
pub trait ParamGroup {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);
}

/// One convolution step: ReLU -> separable conv -> layer norm, with the
/// depthwise kernel `[kh, kw, C]`, pointwise `[C, F]`, and the trailing
/// norm's gain/shift of size `[F]`.
#[derive(Debug, Clone)]
pub struct ConvStepParams {
    pub dw: Param,
    pub pw: Param,
    pub gain: Param,
    pub shift: Param,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl ConvStepParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &ParamInit,
        prefix: &str,
        (kh, kw): (usize, usize),
        cin: usize,
        filters: usize,
        stride: (usize, usize),
        dilation: (usize, usize),
    ) -> Self {
        ConvStepParams {
            dw: init.he(&format!("{prefix}/dw"), &[kh, kw, cin], kh * kw),
            pw: init.he(&format!("{prefix}/pw"), &[cin, filters], cin),
            gain: init.ones(&format!("{prefix}/g"), &[filters]),
            shift: init.zeros(&format!("{prefix}/b"), &[filters]),
            stride,
            dilation,
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.dw.value.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.pw.value.shape()[1]
    }
}

impl ParamGroup for ConvStepParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.extend([&self.dw, &self.pw, &self.gain, &self.shift]);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.extend([&mut self.dw, &mut self.pw, &mut self.gain, &mut self.shift]);
    }
}

/// Four convolution steps with skips from the block input after steps 2
/// and 4; kernels 3,3,15,15 along the sequence axis, the last dilated by 8.
#[derive(Debug, Clone)]
pub struct ConvBlockParams {
    pub steps: [ConvStepParams; 4],
    pub dropout: f64,
}

pub const CONV_BLOCK_DROPOUT: f64 = 0.4;

impl ConvBlockParams {
    pub fn new(init: &ParamInit, prefix: &str, channels: usize, dropout: f64) -> Self {
        let step = |i: usize, k: usize, d: usize| {
            ConvStepParams::new(
                init,
                &format!("{prefix}/s{i}"),
                (k, 1),
                channels,
                channels,
                (1, 1),
                (d, 1),
            )
        };
        ConvBlockParams {
            steps: [step(0, 3, 1), step(1, 3, 1), step(2, 15, 1), step(3, 15, 8)],
            dropout,
        }
    }

    pub fn channels(&self) -> usize {
        self.steps[0].in_channels()
    }
}

impl ParamGroup for ConvBlockParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for s in &self.steps {
            s.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for s in &mut self.steps {
            s.visit_mut(out);
        }
    }
}

/// Multi-head dot-product attention: query/key/value projections plus the
/// two convolutional blocks that mix the timing-composed target.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: usize,
    pub depth: usize,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub mix: [ConvBlockParams; 2],
}

impl AttentionParams {
    pub fn new(init: &ParamInit, prefix: &str, depth: usize, heads: usize, dropout: f64) -> Self {
        AttentionParams {
            heads,
            depth,
            wq: init.normal(&format!("{prefix}/q"), &[depth, depth], (1.0 / depth as f64).sqrt()),
            wk: init.normal(&format!("{prefix}/k"), &[depth, depth], (1.0 / depth as f64).sqrt()),
            wv: init.normal(&format!("{prefix}/v"), &[depth, depth], (1.0 / depth as f64).sqrt()),
            mix: [
                ConvBlockParams::new(init, &format!("{prefix}/m0"), depth, dropout),
                ConvBlockParams::new(init, &format!("{prefix}/m1"), depth, dropout),
            ],
        }
    }
}

impl ParamGroup for AttentionParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.extend([&self.wq, &self.wk, &self.wv]);
        for m in &self.mix {
            m.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.extend([&mut self.wq, &mut self.wk, &mut self.wv]);
        for m in &mut self.mix {
            m.visit_mut(out);
        }
    }
}

/// One expert: a two-layer feed-forward `C -> H -> C` with ReLU inside.
#[derive(Debug, Clone)]
pub struct ExpertParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

impl ParamGroup for ExpertParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
    }
}

/// Sparsely-gated mixture of experts: noisy top-k gating over a pool of
/// feed-forward experts, with the squared-coefficient-of-variation
/// importance penalty.
#[derive(Debug, Clone)]
pub struct MoEParams {
    pub experts: Vec<ExpertParams>,
    pub w_gate: Param,
    pub w_noise: Param,
    pub k: usize,
    pub w_balance: f64,
}

impl MoEParams {
    pub fn new(
        init: &ParamInit,
        prefix: &str,
        depth: usize,
        hidden: usize,
        n_experts: usize,
        k: usize,
        w_balance: f64,
    ) -> Self {
        let experts = (0..n_experts)
            .map(|e| ExpertParams {
                w1: init.he(&format!("{prefix}/e{e}/w1"), &[depth, hidden], depth),
                b1: init.zeros(&format!("{prefix}/e{e}/b1"), &[hidden]),
                w2: init.he(&format!("{prefix}/e{e}/w2"), &[hidden, depth], hidden),
                b2: init.zeros(&format!("{prefix}/e{e}/b2"), &[depth]),
            })
            .collect();
        MoEParams {
            experts,
            w_gate: init.zeros(&format!("{prefix}/gate"), &[depth, n_experts]),
            w_noise: init.zeros(&format!("{prefix}/noise"), &[depth, n_experts]),
            k,
            w_balance,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn hidden(&self) -> usize {
        self.experts[0].b1.value.shape()[0]
    }
}

impl ParamGroup for MoEParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for e in &self.experts {
            e.visit(out);
        }
        out.extend([&self.w_gate, &self.w_noise]);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for e in &mut self.experts {
            e.visit_mut(out);
        }
        out.extend([&mut self.w_gate, &mut self.w_noise]);
    }
}
