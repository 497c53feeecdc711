//! The model body: encoder, input/output mixer, autoregressive decoder,
//! command tokens, teacher-forced loss and greedy generation.
//!
//! One parameter set serves every task: the body is shared outright and
//! modality nets are shared by all tasks with that modality. Decoding for
//! a task starts from its learned command embedding.

use mm_data::{Batch, BatchInput, BatchTarget, Modality, TaskSpec, PAD_ID, TERM_ID};
use mm_tensor::{PadMode, Param, RngStream, Tape, Tensor};

use crate::blocks::{attention_block, conv_block, moe_layer, target_mix};
use crate::error::{ModelError, Result};
use crate::modality::{
    audio_in, categorical_logits, image_in, language_in, language_logits, AudioEntryParams,
    CategoricalExitParams, ImageEntryParams, LanguageModalityParams,
};
use crate::params::{
    AttentionParams, ConvBlockParams, MoEParams, ParamGroup, ParamInit, CONV_BLOCK_DROPOUT,
};

/// Dimensions and switches for one model instance. The `use_moe` /
/// `use_attention` flags implement the block ablations: a disabled
/// mixture layer is skipped outright, a disabled attention block
/// degenerates to its two target-mixing convolution blocks.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub n_experts: usize,
    pub moe_k: usize,
    pub w_balance: f64,
    pub dropout: f64,
    pub vocab_size: usize,
    pub n_tasks: usize,
    pub n_classes: usize,
    pub use_moe: bool,
    pub use_attention: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for joint training.
    pub fn desk(vocab_size: usize, n_tasks: usize) -> Self {
        ModelConfig {
            depth: 64,
            heads: 8,
            n_experts: 16,
            moe_k: 4,
            w_balance: 0.01,
            dropout: CONV_BLOCK_DROPOUT,
            vocab_size,
            n_tasks,
            n_classes: 4,
            use_moe: true,
            use_attention: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth % 2 != 0 {
            return Err(ModelError::Config(format!(
                "depth {} must be positive and even",
                self.depth
            )));
        }
        if self.heads == 0 || self.depth % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "depth {} must divide into {} heads",
                self.depth, self.heads
            )));
        }
        if self.moe_k == 0 || self.moe_k > self.n_experts {
            return Err(ModelError::Config(format!(
                "k {} outside 1..={}",
                self.moe_k, self.n_experts
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        if self.vocab_size < 4 || self.n_tasks == 0 {
            return Err(ModelError::Config("vocab or task list too small".into()));
        }
        Ok(())
    }
}

pub const ENCODER_BLOCKS: usize = 6;
/// Mixture layer sits after this many encoder blocks.
pub const ENCODER_MOE_AT: usize = 3;
pub const MIXER_BLOCKS: usize = 2;
pub const DECODER_UNITS: usize = 4;
/// Mixture layer sits after this many decoder units.
pub const DECODER_MOE_AT: usize = 2;

/// Task dispatch summary: modalities plus the command-token row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRoute {
    pub name: String,
    pub command: usize,
    pub input: Modality,
    pub output: Modality,
}

impl From<&TaskSpec> for TaskRoute {
    fn from(t: &TaskSpec) -> Self {
        TaskRoute {
            name: t.name.clone(),
            command: t.command,
            input: t.input_modality(),
            output: t.output_modality(),
        }
    }
}

/// All learned state of one MultiModel instance.
#[derive(Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder_blocks: Vec<ConvBlockParams>,
    pub encoder_moe: MoEParams,
    pub mixer_attn: AttentionParams,
    pub mixer_blocks: Vec<ConvBlockParams>,
    pub decoder_convs: Vec<ConvBlockParams>,
    pub decoder_attns: Vec<AttentionParams>,
    pub decoder_moe: MoEParams,
    pub command: Param,
    pub language: LanguageModalityParams,
    pub image: ImageEntryParams,
    pub categorical: CategoricalExitParams,
    pub audio: AudioEntryParams,
}

impl ModelParams {
    pub fn new(config: ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let init = ParamInit::new(seed);
        let c = config.depth;
        let hidden = 2 * c;
        let encoder_blocks = (0..ENCODER_BLOCKS)
            .map(|i| ConvBlockParams::new(&init, &format!("enc/b{i}"), c, config.dropout))
            .collect();
        let decoder_convs = (0..DECODER_UNITS)
            .map(|i| ConvBlockParams::new(&init, &format!("dec/u{i}/conv"), c, config.dropout))
            .collect();
        let decoder_attns = (0..DECODER_UNITS)
            .map(|i| {
                AttentionParams::new(&init, &format!("dec/u{i}/attn"), c, config.heads, config.dropout)
            })
            .collect();
        Ok(ModelParams {
            encoder_blocks,
            encoder_moe: MoEParams::new(
                &init, "enc/moe", c, hidden, config.n_experts, config.moe_k, config.w_balance,
            ),
            mixer_attn: AttentionParams::new(&init, "mix/attn", c, config.heads, config.dropout),
            mixer_blocks: (0..MIXER_BLOCKS)
                .map(|i| ConvBlockParams::new(&init, &format!("mix/b{i}"), c, config.dropout))
                .collect(),
            decoder_convs,
            decoder_attns,
            decoder_moe: MoEParams::new(
                &init, "dec/moe", c, hidden, config.n_experts, config.moe_k, config.w_balance,
            ),
            command: init.normal("cmd", &[config.n_tasks, c], 1.0),
            language: LanguageModalityParams::new(&init, "lang", config.vocab_size, c),
            image: ImageEntryParams::new(&init, "img", c)?,
            categorical: CategoricalExitParams::new(&init, "cat", c, config.n_classes)?,
            audio: AudioEntryParams::new(&init, "aud", c),
            config,
        })
    }

    /// Every parameter in a fixed traversal order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for b in &self.encoder_blocks {
            b.visit(&mut out);
        }
        self.encoder_moe.visit(&mut out);
        self.mixer_attn.visit(&mut out);
        for b in &self.mixer_blocks {
            b.visit(&mut out);
        }
        for u in 0..DECODER_UNITS {
            self.decoder_convs[u].visit(&mut out);
            self.decoder_attns[u].visit(&mut out);
        }
        self.decoder_moe.visit(&mut out);
        out.push(&self.command);
        self.language.visit(&mut out);
        self.image.visit(&mut out);
        self.categorical.visit(&mut out);
        self.audio.visit(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.encoder_blocks {
            b.visit_mut(&mut out);
        }
        self.encoder_moe.visit_mut(&mut out);
        self.mixer_attn.visit_mut(&mut out);
        for b in &mut self.mixer_blocks {
            b.visit_mut(&mut out);
        }
        for (conv, attn) in self.decoder_convs.iter_mut().zip(self.decoder_attns.iter_mut()) {
            conv.visit_mut(&mut out);
            attn.visit_mut(&mut out);
        }
        self.decoder_moe.visit_mut(&mut out);
        out.push(&mut self.command);
        self.language.visit_mut(&mut out);
        self.image.visit_mut(&mut out);
        self.categorical.visit_mut(&mut out);
        self.audio.visit_mut(&mut out);
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

fn zero_scalar() -> Tensor {
    Tensor::zeros(&[1])
}

/// Encoder: 6 same-padded convolution blocks with the mixture layer after
/// block 3; returns the encoded sequence plus the balance cost.
pub fn encode(
    tape: &mut Tape,
    m: &ModelParams,
    x: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let mut state = x.clone();
    let mut aux = zero_scalar();
    for (i, block) in m.encoder_blocks.iter().enumerate() {
        if i == ENCODER_MOE_AT && m.config.use_moe {
            let (y, cost) = moe_layer(tape, &m.encoder_moe, &state, train, rng)?;
            state = y;
            aux = cost;
        }
        state = conv_block(tape, block, &state, PadMode::Same, train, rng)?;
    }
    Ok((state, aux))
}

/// Mixer: attention from the shifted outputs onto the encoded inputs,
/// then two causal convolution blocks.
pub fn mix(
    tape: &mut Tape,
    m: &ModelParams,
    encoded: &Tensor,
    outputs_shifted: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let mut state = if m.config.use_attention {
        let ctx = attention_block(tape, &m.mixer_attn, encoded, outputs_shifted, train, rng)?;
        // Residual bypass keeps the autoregressive stream reachable; the
        // stack is ByteNet-style residual end to end.
        tape.add(&ctx, outputs_shifted)?
    } else {
        target_mix(tape, &m.mixer_attn, outputs_shifted, train, rng)?
    };
    for block in &m.mixer_blocks {
        state = conv_block(tape, block, &state, PadMode::Left, train, rng)?;
    }
    Ok(state)
}

/// Decoder: 4 units of causal convolution plus attention onto the encoded
/// inputs, with the mixture layer after unit 2; state starts at the mixer
/// output.
pub fn decode_body(
    tape: &mut Tape,
    m: &ModelParams,
    encoded: &Tensor,
    mixed: &Tensor,
    train: bool,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let mut state = mixed.clone();
    let mut aux = zero_scalar();
    for u in 0..DECODER_UNITS {
        if u == DECODER_MOE_AT && m.config.use_moe {
            let (y, cost) = moe_layer(tape, &m.decoder_moe, &state, train, rng)?;
            state = y;
            aux = cost;
        }
        state = conv_block(tape, &m.decoder_convs[u], &state, PadMode::Left, train, rng)?;
        state = if m.config.use_attention {
            let ctx = attention_block(tape, &m.decoder_attns[u], encoded, &state, train, rng)?;
            tape.add(&ctx, &state)?
        } else {
            target_mix(tape, &m.decoder_attns[u], &state, train, rng)?
        };
    }
    Ok((state, aux))
}

/// Everything the harness needs from one teacher-forced pass.
pub struct ForwardPass {
    /// Training objective: cross-entropy plus the mixture balance costs.
    pub loss: Tensor,
    /// Mean cross-entropy per scored position, `[1]`.
    pub ce: Tensor,
    /// Summed balance costs, `[1]`.
    pub aux: Tensor,
    /// `[B, Lo, V]` or `[B, n_classes]`.
    pub logits: Tensor,
    /// Per-token (or per-class) probabilities, same shape as `logits`.
    pub probs: Tensor,
    /// Number of scored target positions.
    pub scored: usize,
}

/// Runs the input modality net for a batch; ragged token rows are padded
/// to the batch maximum.
fn embed_input(tape: &mut Tape, m: &ModelParams, batch: &Batch) -> Result<Tensor> {
    match &batch.input {
        BatchInput::Tokens(rows) => {
            let padded = pad_rows(rows);
            language_in(tape, &m.language, &padded.ids, (padded.batch, padded.len))
        }
        BatchInput::Image(img) => image_in(tape, &m.image, img),
        BatchInput::Audio(audio) => audio_in(tape, &m.audio, audio),
    }
}

struct PaddedTokens {
    ids: Vec<usize>,
    batch: usize,
    len: usize,
}

fn pad_rows(rows: &[Vec<u32>]) -> PaddedTokens {
    let batch = rows.len();
    let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut ids = vec![PAD_ID as usize; batch * len];
    for (b, row) in rows.iter().enumerate() {
        for (t, &id) in row.iter().enumerate() {
            ids[b * len + t] = id as usize;
        }
    }
    PaddedTokens { ids, batch, len }
}

/// Builds the decoder input: the task's command embedding at position 0,
/// followed by the target embeddings shifted right by one (language
/// targets) or zeros (categorical targets, where the decoder length is the
/// spatial map size).
fn shifted_outputs(
    tape: &mut Tape,
    m: &ModelParams,
    batch: &Batch,
    target_rows: Option<&PaddedTokens>,
) -> Result<Tensor> {
    let b = batch.len();
    let c = m.config.depth;
    if batch.command >= m.config.n_tasks {
        return Err(ModelError::Route(format!(
            "command {} outside the {}-task command table",
            batch.command, m.config.n_tasks
        )));
    }
    let cmd_table = tape.param(&m.command)?;
    let cmd_ids = vec![batch.command; b];
    let cmd = tape.embedding(&cmd_table, &cmd_ids, &[b, 1])?;

    let lo = match target_rows {
        Some(rows) => rows.len,
        None => {
            let hint = batch
                .spatial_hint
                .ok_or_else(|| ModelError::Route("categorical route without spatial hint".into()))?;
            hint.0 * hint.1
        }
    };
    if lo == 1 {
        return Ok(cmd);
    }
    match target_rows {
        Some(rows) => {
            // Positions 1..Lo see target tokens 0..Lo-1.
            let mut shifted = Vec::with_capacity(b * (lo - 1));
            for row in 0..b {
                shifted.extend_from_slice(&rows.ids[row * lo..row * lo + lo - 1]);
            }
            let table = tape.param(&m.language.emb)?;
            let emb = tape.embedding(&table, &shifted, &[b, lo - 1])?;
            Ok(tape.concat(&[&cmd, &emb], 1)?)
        }
        None => {
            let zeros = Tensor::zeros(&[b, lo - 1, c]);
            Ok(tape.concat(&[&cmd, &zeros], 1)?)
        }
    }
}

/// Teacher-forced forward pass: loss is the mean cross-entropy over scored
/// (non-pad) target positions plus the mixture balance costs.
pub fn forward_teacher_forced(
    tape: &mut Tape,
    m: &ModelParams,
    batch: &Batch,
    train: bool,
    rng: &mut RngStream,
) -> Result<ForwardPass> {
    check_route(m, batch)?;
    let target_rows = match &batch.target {
        BatchTarget::Tokens(rows) => Some(pad_rows(rows)),
        BatchTarget::Class(_) => None,
    };

    let x = embed_input(tape, m, batch)?;
    let (encoded, aux_enc) = encode(tape, m, &x, train, rng)?;
    let shifted = shifted_outputs(tape, m, batch, target_rows.as_ref())?;
    let mixed = mix(tape, m, &encoded, &shifted, train, rng)?;
    let (body, aux_dec) = decode_body(tape, m, &encoded, &mixed, train, rng)?;

    let (logits, ce, scored) = match &batch.target {
        BatchTarget::Tokens(rows) => {
            let padded = target_rows.as_ref().expect("token target");
            let logits = language_logits(tape, &m.language, &body)?;
            let (b, lo, v) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
            let lp = tape.log_softmax(&logits)?;
            let flat = tape.reshape(&lp, &[b * lo, v])?;
            let rows_idx: Vec<usize> = (0..b * lo).collect();
            let cols: Vec<usize> = padded.ids.clone();
            let picked = tape.gather_cells(&flat, &rows_idx, &cols)?;
            let mut mask = vec![0.0; b * lo];
            let mut scored = 0usize;
            for (r, row) in rows.iter().enumerate() {
                for t in 0..row.len() {
                    mask[r * lo + t] = 1.0;
                    scored += 1;
                }
            }
            let mask = Tensor::new(&[b * lo], mask).expect("mask is finite");
            let masked = tape.mul(&picked, &mask)?;
            let total = tape.sum_all(&masked)?;
            let ce = tape.scale(&total, -1.0 / scored as f64)?;
            (logits, ce, scored)
        }
        BatchTarget::Class(classes) => {
            let hint = batch
                .spatial_hint
                .ok_or_else(|| ModelError::Route("categorical route without spatial hint".into()))?;
            let logits = categorical_logits(tape, &m.categorical, &body, hint)?;
            let lp = tape.log_softmax(&logits)?;
            let rows_idx: Vec<usize> = (0..classes.len()).collect();
            let picked = tape.gather_cells(&lp, &rows_idx, classes)?;
            let total = tape.sum_all(&picked)?;
            let ce = tape.scale(&total, -1.0 / classes.len() as f64)?;
            (logits, ce, classes.len())
        }
    };

    let aux = tape.add(&aux_enc, &aux_dec)?;
    let loss = tape.add(&ce, &aux)?;
    let probs = tape.softmax(&logits)?;
    Ok(ForwardPass { loss, ce, aux, logits, probs, scored })
}

fn check_route(m: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(ModelError::Route("empty batch".into()));
    }
    match (&batch.input, &batch.target) {
        (BatchInput::Tokens(rows), _) if rows.iter().any(|r| r.is_empty()) => {
            Err(ModelError::Route("empty token sequence".into()))
        }
        (_, BatchTarget::Tokens(rows)) if rows.iter().any(|r| r.is_empty()) => {
            Err(ModelError::Route("empty target sequence".into()))
        }
        (_, BatchTarget::Class(cs)) if cs.iter().any(|c| *c >= m.config.n_classes) => {
            Err(ModelError::Route("class id outside the class count".into()))
        }
        _ => Ok(()),
    }
}

/// Greedy decoding output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Generated {
    /// Per-sample token ids; each stops after its termination id (included
    /// when emitted before `max_len`).
    Tokens(Vec<Vec<u32>>),
    Classes(Vec<usize>),
}

/// Greedy argmax decoding. Step 0 consumes only the command token; language
/// routes stop at the termination token or `max_len`; categorical routes
/// emit a single class from one pass.
pub fn generate(m: &ModelParams, batch: &Batch, max_len: usize) -> Result<Generated> {
    if max_len == 0 {
        return Err(ModelError::Route("max_len must be at least 1".into()));
    }
    let mut rng = RngStream::new(0); // eval mode draws nothing
    let b = batch.len();

    // Encode once; the result is detached and re-enters later tapes as a
    // constant.
    let encoded = {
        let mut tape = Tape::inference();
        let x = embed_input(&mut tape, m, batch)?;
        let (encoded, _) = encode(&mut tape, m, &x, false, &mut rng)?;
        encoded.detach()
    };

    let categorical = matches!(batch.target, BatchTarget::Class(_));
    if categorical {
        let hint = batch
            .spatial_hint
            .ok_or_else(|| ModelError::Route("categorical route without spatial hint".into()))?;
        let mut tape = Tape::inference();
        let shifted = shifted_outputs(&mut tape, m, batch, None)?;
        let mixed = mix(&mut tape, m, &encoded, &shifted, false, &mut rng)?;
        let (body, _) = decode_body(&mut tape, m, &encoded, &mixed, false, &mut rng)?;
        let logits = categorical_logits(&mut tape, &m.categorical, &body, hint)?;
        let n = m.config.n_classes;
        let classes = (0..b)
            .map(|r| argmax(&logits.data()[r * n..(r + 1) * n]))
            .collect();
        return Ok(Generated::Classes(classes));
    }

    let mut seqs: Vec<Vec<u32>> = vec![Vec::new(); b];
    let mut done = vec![false; b];
    for _ in 0..max_len {
        // Teacher-force the tokens generated so far (pad finished rows).
        let cur_len = 1 + seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![PAD_ID as usize; b * (cur_len - 1)];
        for (r, seq) in seqs.iter().enumerate() {
            for (t, &id) in seq.iter().enumerate() {
                ids[r * (cur_len - 1) + t] = id as usize;
            }
        }
        let mut tape = Tape::inference();
        let cmd_table = tape.param(&m.command)?;
        let cmd_ids = vec![batch.command; b];
        let cmd = tape.embedding(&cmd_table, &cmd_ids, &[b, 1])?;
        let shifted = if cur_len == 1 {
            cmd
        } else {
            let table = tape.param(&m.language.emb)?;
            let emb = tape.embedding(&table, &ids, &[b, cur_len - 1])?;
            tape.concat(&[&cmd, &emb], 1)?
        };
        let mixed = mix(&mut tape, m, &encoded, &shifted, false, &mut rng)?;
        let (body, _) = decode_body(&mut tape, m, &encoded, &mixed, false, &mut rng)?;
        let logits = language_logits(&mut tape, &m.language, &body)?;
        let v = m.config.vocab_size;
        let lo = logits.shape()[1];
        for r in 0..b {
            if done[r] || seqs[r].len() + 1 < lo {
                continue;
            }
            let row = &logits.data()[(r * lo + seqs[r].len()) * v..(r * lo + seqs[r].len() + 1) * v];
            let next = argmax(row) as u32;
            seqs[r].push(next);
            if next == TERM_ID {
                done[r] = true;
            }
        }
        if done.iter().all(|d| *d) {
            break;
        }
    }
    Ok(Generated::Tokens(seqs))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
