//! Batch assembly: samples to aligned tensors/id-sequences plus the
//! categorical spatial hint.

use mm_tensor::Tensor;

use crate::error::{DataError, Result};
use crate::tasks::{
    sample, SampleInput, SampleTarget, TaskKind, TaskSpec, AUDIO_LEN, IMAGE_SIZE,
};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone)]
pub enum BatchInput {
    /// Per-sample token ids (termination-terminated); lengths may vary,
    /// consumers pad to the batch maximum.
    Tokens(Vec<Vec<u32>>),
    /// `[B, H, W, 3]`
    Image(Tensor),
    /// `[B, T, 1]`
    Audio(Tensor),
}

#[derive(Debug, Clone)]
pub enum BatchTarget {
    /// Per-sample token ids ending in the termination id.
    Tokens(Vec<Vec<u32>>),
    Class(Vec<usize>),
}

/// Aligned input/target group for one task.
#[derive(Debug, Clone)]
pub struct Batch {
    pub task_name: String,
    /// Command-table row for this task.
    pub command: usize,
    pub input: BatchInput,
    pub target: BatchTarget,
    /// 2-D factorization of the encoder output length, required by
    /// categorical routes.
    pub spatial_hint: Option<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        match &self.input {
            BatchInput::Tokens(t) => t.len(),
            BatchInput::Image(t) | BatchInput::Audio(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spatial hint after the input modality net's fixed reduction.
fn spatial_hint(kind: &TaskKind) -> Option<(usize, usize)> {
    match kind {
        // Image nets reduce each axis by exactly 16.
        TaskKind::ImageClassify => Some((IMAGE_SIZE / 16, IMAGE_SIZE / 16)),
        // The audio stack halves time 8 times; width stays 1.
        TaskKind::AudioClassify => Some((AUDIO_LEN.div_ceil(256).max(1), 1)),
        _ => None,
    }
}

/// Builds the batch covering sample indices `start..start+count`.
pub fn make_batch(
    task: &TaskSpec,
    vocab: &Vocab,
    seed: u64,
    start: usize,
    count: usize,
) -> Result<Batch> {
    if count == 0 {
        return Err(DataError::Invalid("empty batch".into()));
    }
    let samples: Vec<_> = (start..start + count).map(|i| sample(task, seed, i)).collect();

    let input = match samples[0].input {
        SampleInput::Text(_) => {
            let mut rows = Vec::with_capacity(count);
            for s in &samples {
                match &s.input {
                    SampleInput::Text(t) => rows.push(vocab.encode(t)),
                    _ => unreachable!("mixed input modalities in one task"),
                }
            }
            BatchInput::Tokens(rows)
        }
        SampleInput::Image(_) => BatchInput::Image(stack(&samples, |s| match &s.input {
            SampleInput::Image(t) => t,
            _ => unreachable!(),
        })?),
        SampleInput::Audio(_) => BatchInput::Audio(stack(&samples, |s| match &s.input {
            SampleInput::Audio(t) => t,
            _ => unreachable!(),
        })?),
    };

    let target = match samples[0].target {
        SampleTarget::Text(_) => BatchTarget::Tokens(
            samples
                .iter()
                .map(|s| match &s.target {
                    SampleTarget::Text(t) => vocab.encode(t),
                    _ => unreachable!(),
                })
                .collect(),
        ),
        SampleTarget::Class(_) => BatchTarget::Class(
            samples
                .iter()
                .map(|s| match &s.target {
                    SampleTarget::Class(c) => *c,
                    _ => unreachable!(),
                })
                .collect(),
        ),
    };

    Ok(Batch {
        task_name: task.name.clone(),
        command: task.command,
        input,
        target,
        spatial_hint: spatial_hint(&task.kind),
    })
}

fn stack<'a, F>(samples: &'a [crate::tasks::Sample], pick: F) -> Result<Tensor>
where
    F: Fn(&'a crate::tasks::Sample) -> &'a Tensor,
{
    let first = pick(&samples[0]);
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(samples.len() * first.numel());
    for s in samples {
        let t = pick(s);
        if t.shape() != first.shape() {
            return Err(DataError::Invalid(format!(
                "ragged sample shapes {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(&shape, data)?)
}
