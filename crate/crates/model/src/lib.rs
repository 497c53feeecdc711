//! One model, multiple modalities: convolutional blocks, attention with
//! timing signals, sparsely-gated mixture-of-experts, the four modality
//! nets, and the encoder/mixer/decoder body with command-token dispatch.

mod blocks;
mod body;
mod error;
mod modality;
mod params;

pub use blocks::{
    attention_block, conv_block, conv_step, moe_gate, moe_gate_flat, moe_layer, target_mix,
    timing_signal, timing_signal_at, GateOut,
};
pub use body::{
    decode_body, encode, forward_teacher_forced, generate, mix, ForwardPass, Generated,
    ModelConfig, ModelParams, TaskRoute, DECODER_MOE_AT, DECODER_UNITS, ENCODER_BLOCKS,
    ENCODER_MOE_AT, MIXER_BLOCKS,
};
pub use error::{ModelError, Result};
pub use modality::{
    audio_in, categorical_logits, categorical_out, conv_res, image_in, language_in,
    language_logits, language_out, AudioEntryParams, CategoricalExitParams, ConvResParams,
    ImageEntryParams, LanguageModalityParams, AUDIO_STAGES,
};
pub use params::{
    AttentionParams, ConvBlockParams, ConvStepParams, ExpertParams, MoEParams, ParamGroup,
    ParamInit, CONV_BLOCK_DROPOUT, LAYER_NORM_EPS,
};
