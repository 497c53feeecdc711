//! Modality nets: small sub-networks converting language, image, audio and
//! categorical data to and from the unified `[batch, length, depth]`
//! representation. Tasks sharing a modality share one parameter set.

use mm_tensor::{PadMode, Tape, Tensor, TensorError};

use crate::blocks::conv_step;
use crate::error::{ModelError, Result};
use crate::params::{ConvStepParams, ParamGroup, ParamInit};

use mm_tensor::Param;

/// Token embedding in, linear projection plus softmax out. The output
/// projection starts at zero so an untrained model is exactly uniform.
#[derive(Debug, Clone)]
pub struct LanguageModalityParams {
    pub emb: Param,
    pub proj: Param,
    pub vocab: usize,
    pub pad_id: u32,
    pub term_id: u32,
}

impl LanguageModalityParams {
    pub fn new(init: &ParamInit, prefix: &str, vocab: usize, depth: usize) -> Self {
        LanguageModalityParams {
            emb: init.normal(&format!("{prefix}/emb"), &[vocab, depth], 1.0),
            proj: init.zeros(&format!("{prefix}/proj"), &[depth, vocab]),
            vocab,
            pad_id: 0,
            term_id: 1,
        }
    }
}

impl ParamGroup for LanguageModalityParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.extend([&self.emb, &self.proj]);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.extend([&mut self.emb, &mut self.proj]);
    }
}

/// `[B, L]` ids to `[B, L, C]` embeddings.
pub fn language_in(
    tape: &mut Tape,
    p: &LanguageModalityParams,
    ids: &[usize],
    (b, l): (usize, usize),
) -> Result<Tensor> {
    let table = tape.param(&p.emb)?;
    Ok(tape.embedding(&table, ids, &[b, l])?)
}

/// Body output to vocabulary logits.
pub fn language_logits(
    tape: &mut Tape,
    p: &LanguageModalityParams,
    body: &Tensor,
) -> Result<Tensor> {
    let w = tape.param(&p.proj)?;
    Ok(tape.pointwise_conv(body, &w)?)
}

/// Body output to per-token vocabulary probabilities.
pub fn language_out(
    tape: &mut Tape,
    p: &LanguageModalityParams,
    body: &Tensor,
) -> Result<Tensor> {
    let logits = language_logits(tape, p, body)?;
    Ok(tape.softmax(&logits)?)
}

/// Residual downsampling stage: two 3x3 conv steps, a 3x3/stride-2 max
/// pool, plus a strided 1x1 skip.
#[derive(Debug, Clone)]
pub struct ConvResParams {
    pub c1: ConvStepParams,
    pub c2: ConvStepParams,
    pub skip: ConvStepParams,
    pub stride: (usize, usize),
}

impl ConvResParams {
    pub fn new(
        init: &ParamInit,
        prefix: &str,
        cin: usize,
        filters: usize,
        stride: (usize, usize),
    ) -> Self {
        ConvResParams {
            c1: ConvStepParams::new(init, &format!("{prefix}/c1"), (3, 3), cin, filters, (1, 1), (1, 1)),
            c2: ConvStepParams::new(init, &format!("{prefix}/c2"), (3, 3), filters, filters, (1, 1), (1, 1)),
            skip: ConvStepParams::new(init, &format!("{prefix}/skip"), (1, 1), cin, filters, stride, (1, 1)),
            stride,
        }
    }
}

impl ParamGroup for ConvResParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.c1.visit(out);
        self.c2.visit(out);
        self.skip.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.c1.visit_mut(out);
        self.c2.visit_mut(out);
        self.skip.visit_mut(out);
    }
}

/// `ConvRes(x, F)`: c1 -> c2 -> max-pool(3x3, stride) plus the strided
/// 1x1 skip; halves each strided spatial axis.
pub fn conv_res(tape: &mut Tape, p: &ConvResParams, x: &Tensor) -> Result<Tensor> {
    let a = conv_step(tape, &p.c1, x, PadMode::Same)?;
    let b = conv_step(tape, &p.c2, &a, PadMode::Same)?;
    let pooled = tape.max_pool2d(&b, (3, 3), p.stride)?;
    let skipped = conv_step(tape, &p.skip, x, PadMode::Same)?;
    Ok(tape.add(&pooled, &skipped)?)
}

/// Image entry flow: two stem conv steps then three ConvRes stages with
/// strictly increasing widths ending at the body depth. Every axis shrinks
/// by exactly 16. Desk widths scale with the body depth; the full-scale
/// profile uses 32, 64 and stages 128, 256, d=1024.
#[derive(Debug, Clone)]
pub struct ImageEntryParams {
    pub h1: ConvStepParams,
    pub h2: ConvStepParams,
    pub stages: [ConvResParams; 3],
}

impl ImageEntryParams {
    pub fn new(init: &ParamInit, prefix: &str, depth: usize) -> Result<Self> {
        let w_h1 = (depth / 4).max(2);
        let w_h2 = (depth * 3 / 8).max(3);
        let w = [(depth / 2).max(4), (depth * 3 / 4).max(5), depth];
        if !(w_h1 < w_h2 && w_h2 < w[0] && w[0] < w[1] && w[1] < w[2]) {
            return Err(ModelError::Config(format!(
                "image stage widths must strictly increase, got {w_h1},{w_h2},{},{},{}",
                w[0], w[1], w[2]
            )));
        }
        Ok(ImageEntryParams {
            h1: ConvStepParams::new(init, &format!("{prefix}/h1"), (3, 3), 3, w_h1, (2, 2), (1, 1)),
            h2: ConvStepParams::new(init, &format!("{prefix}/h2"), (3, 3), w_h1, w_h2, (1, 1), (1, 1)),
            stages: [
                ConvResParams::new(init, &format!("{prefix}/r0"), w_h2, w[0], (2, 2)),
                ConvResParams::new(init, &format!("{prefix}/r1"), w[0], w[1], (2, 2)),
                ConvResParams::new(init, &format!("{prefix}/r2"), w[1], w[2], (2, 2)),
            ],
        })
    }
}

impl ParamGroup for ImageEntryParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.h1.visit(out);
        self.h2.visit(out);
        for s in &self.stages {
            s.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.h1.visit_mut(out);
        self.h2.visit_mut(out);
        for s in &mut self.stages {
            s.visit_mut(out);
        }
    }
}

/// `[B, H, W, 3]` image to `[B, ceil(H/16)*ceil(W/16), depth]`.
pub fn image_in(tape: &mut Tape, p: &ImageEntryParams, img: &Tensor) -> Result<Tensor> {
    if img.rank() != 4 || img.shape()[3] != 3 {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "image_in",
            detail: format!("want [B,H,W,3], got {:?}", img.shape()),
        }));
    }
    if img.shape()[1] < 16 || img.shape()[2] < 16 {
        return Err(ModelError::Route(format!(
            "image {}x{} is smaller than the 16x16 minimum",
            img.shape()[1],
            img.shape()[2]
        )));
    }
    let mut x = conv_step(tape, &p.h1, img, PadMode::Same)?;
    x = conv_step(tape, &p.h2, &x, PadMode::Same)?;
    for stage in &p.stages {
        x = conv_res(tape, stage, &x)?;
    }
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    Ok(tape.reshape(&x, &[b, h * w, c])?)
}

/// Categorical exit flow: a skip/conv/max-pool residual over the reshaped
/// 2-D map, two widening conv steps (4x and 8x the body depth at desk
/// scale; 1536/2048 at full scale), global mean, class projection.
#[derive(Debug, Clone)]
pub struct CategoricalExitParams {
    pub skip: ConvStepParams,
    pub h1: ConvStepParams,
    pub h2: ConvStepParams,
    pub h4: ConvStepParams,
    pub h5: ConvStepParams,
    pub classes: Param,
    pub n_classes: usize,
}

impl CategoricalExitParams {
    pub fn new(init: &ParamInit, prefix: &str, depth: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(ModelError::Config(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        Ok(CategoricalExitParams {
            skip: ConvStepParams::new(init, &format!("{prefix}/skip"), (3, 3), depth, depth, (2, 2), (1, 1)),
            h1: ConvStepParams::new(init, &format!("{prefix}/h1"), (3, 3), depth, depth, (1, 1), (1, 1)),
            h2: ConvStepParams::new(init, &format!("{prefix}/h2"), (3, 3), depth, depth, (1, 1), (1, 1)),
            h4: ConvStepParams::new(init, &format!("{prefix}/h4"), (3, 3), depth, 4 * depth, (1, 1), (1, 1)),
            h5: ConvStepParams::new(init, &format!("{prefix}/h5"), (3, 3), 4 * depth, 8 * depth, (1, 1), (1, 1)),
            classes: init.zeros(&format!("{prefix}/cls"), &[8 * depth, n_classes]),
            n_classes,
        })
    }
}

impl ParamGroup for CategoricalExitParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.skip.visit(out);
        self.h1.visit(out);
        self.h2.visit(out);
        self.h4.visit(out);
        self.h5.visit(out);
        out.push(&self.classes);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.skip.visit_mut(out);
        self.h1.visit_mut(out);
        self.h2.visit_mut(out);
        self.h4.visit_mut(out);
        self.h5.visit_mut(out);
        out.push(&mut self.classes);
    }
}

/// Class logits from the body output; `body` is `[B, L, C]` with
/// `L == hint.0 * hint.1`.
pub fn categorical_logits(
    tape: &mut Tape,
    p: &CategoricalExitParams,
    body: &Tensor,
    hint: (usize, usize),
) -> Result<Tensor> {
    let (b, l, c) = (body.shape()[0], body.shape()[1], body.shape()[2]);
    if l != hint.0 * hint.1 {
        return Err(ModelError::Route(format!(
            "length {l} does not factor as {}x{}",
            hint.0, hint.1
        )));
    }
    let x = tape.reshape(body, &[b, hint.0, hint.1, c])?;
    let skipped = conv_step(tape, &p.skip, &x, PadMode::Same)?;
    let a = conv_step(tape, &p.h1, &x, PadMode::Same)?;
    let a = conv_step(tape, &p.h2, &a, PadMode::Same)?;
    let pooled = tape.max_pool2d(&a, (3, 3), (2, 2))?;
    let h3 = tape.add(&skipped, &pooled)?;
    let h4 = conv_step(tape, &p.h4, &h3, PadMode::Same)?;
    let h5 = conv_step(tape, &p.h5, &h4, PadMode::Same)?;
    let activated = tape.relu(&h5)?;
    let mean = tape.global_avg_pool(&activated)?;
    let w = tape.param(&p.classes)?;
    Ok(tape.matmul(&mean, &w)?)
}

/// Class probabilities (softmax over the logits).
pub fn categorical_out(
    tape: &mut Tape,
    p: &CategoricalExitParams,
    body: &Tensor,
    hint: (usize, usize),
) -> Result<Tensor> {
    let logits = categorical_logits(tape, p, body, hint)?;
    Ok(tape.softmax(&logits)?)
}

/// Audio entry: 8 ConvRes stages, stage `i` at depth `min(2^(i+1), depth)`.
/// Waveforms are width-1 spectrograms; no stage ever strides the frequency
/// axis, only time.
#[derive(Debug, Clone)]
pub struct AudioEntryParams {
    pub stages: Vec<ConvResParams>,
}

pub const AUDIO_STAGES: usize = 8;

impl AudioEntryParams {
    pub fn new(init: &ParamInit, prefix: &str, depth: usize) -> Self {
        let mut stages = Vec::with_capacity(AUDIO_STAGES);
        let mut cin = 1;
        for i in 0..AUDIO_STAGES {
            let f = (1usize << (i + 1)).min(depth);
            stages.push(ConvResParams::new(
                init,
                &format!("{prefix}/r{i}"),
                cin,
                f,
                (2, 1),
            ));
            cin = f;
        }
        AudioEntryParams { stages }
    }

    pub fn out_depth(&self) -> usize {
        self.stages.last().unwrap().c1.filters()
    }
}

impl ParamGroup for AudioEntryParams {
    fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for s in &self.stages {
            s.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for s in &mut self.stages {
            s.visit_mut(out);
        }
    }
}

/// `[B, T, 1]` waveform or `[B, T, F, 1]` spectrogram to `[B, L, depth]`.
pub fn audio_in(tape: &mut Tape, p: &AudioEntryParams, audio: &Tensor) -> Result<Tensor> {
    let planar = match audio.rank() {
        3 => {
            let (b, t, c) = (audio.shape()[0], audio.shape()[1], audio.shape()[2]);
            if c != 1 {
                return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                    op: "audio_in",
                    detail: format!("waveform wants [B,T,1], got {:?}", audio.shape()),
                }));
            }
            tape.reshape(audio, &[b, t, 1, 1])?
        }
        4 => audio.clone(),
        r => {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "audio_in",
                detail: format!("rank {r} audio input"),
            }))
        }
    };
    let mut x = planar;
    for stage in &p.stages {
        x = conv_res(tape, stage, &x)?;
    }
    let (b, t, f, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    Ok(tape.reshape(&x, &[b, t * f, c])?)
}
