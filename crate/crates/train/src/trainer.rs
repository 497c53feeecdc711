//! Round-robin joint training against one shared parameter set, periodic
//! dev evaluation, and best-checkpoint retention (early stopping).

use std::collections::BTreeMap;

use log::{debug, info};
use mm_data::{make_batch, BatchTarget, TaskSpec, Vocab, DEV_BASE};
use mm_model::{forward_teacher_forced, generate, ModelParams};
use mm_tensor::{RngStream, Tape};

use crate::adam::{adam_step, AdamConfig, OptState};
use crate::error::{Result, TrainError};
use crate::metrics::{MetricAccum, Metrics};


/// Harness knobs for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Total parameter updates (all tasks combined).
    pub steps: usize,
    pub batch_size: usize,
    /// Dev evaluation every this many updates (and once at the end).
    pub eval_interval: usize,
    /// Dev batches per task per evaluation.
    pub dev_batches: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Extra generation slack past the longest reference.
    pub gen_slack: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            eval_interval: 200,
            dev_batches: 2,
            seed: 1,
            adam: AdamConfig::default(),
            gen_slack: 2,
        }
    }
}

/// Result of a run: the best-dev parameters, the metric log
/// (`step<TAB>task<TAB>logppl<TAB>acc<TAB>exact` lines), and the final
/// metrics of the returned parameters.
pub struct TrainOutput {
    pub model: ModelParams,
    pub log: String,
    pub final_metrics: BTreeMap<String, Metrics>,
    /// Training batches drawn per task (round-robin fairness record).
    pub batches_per_task: BTreeMap<String, usize>,
}

/// Trains `model` round-robin over `tasks` (one batch per task per cycle)
/// against one shared parameter set. Keeps the checkpoint with the best
/// mean dev log-perplexity.
pub fn train(
    mut model: ModelParams,
    tasks: &[TaskSpec],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if tasks.is_empty() {
        return Err(TrainError::Invalid("no tasks".into()));
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(TrainError::Invalid("steps and batch_size must be positive".into()));
    }
    let mut opt = OptState::new(cfg.adam.clone());
    let mut log = String::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut batches_per_task: BTreeMap<String, usize> = BTreeMap::new();

    for step in 0..cfg.steps {
        let task = &tasks[step % tasks.len()];
        let cycle = step / tasks.len();
        *batches_per_task.entry(task.name.clone()).or_insert(0) += 1;
        let budget = task.train_budget.max(cfg.batch_size);
        let start = (cycle * cfg.batch_size) % budget;
        let batch = make_batch(task, vocab, cfg.seed, start, cfg.batch_size)?;

        let mut tape = Tape::new();
        let mut rng = RngStream::new(cfg.seed).derive(0xFEED).derive(step as u64);
        let out = forward_teacher_forced(&mut tape, &model, &batch, true, &mut rng)?;
        let loss = out.loss.data()[0];
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(format!(
                "loss at step {step} on task {}",
                task.name
            )));
        }
        let grads = tape.backward(&out.loss)?;
        drop(tape);
        adam_step(&mut model.params_mut(), &grads, &mut opt)?;
        debug!("step {step} task {} loss {loss:.4}", task.name);

        let at_eval = (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps;
        if at_eval {
            let mut mean_ppl = 0.0;
            for task in tasks {
                let m = evaluate(&model, task, vocab, cfg)?;
                mean_ppl += m.log_ppl;
                log.push_str(&format!("{}\t{}\t{}\n", step + 1, task.name, m.line()));
            }
            mean_ppl /= tasks.len() as f64;
            info!("step {} mean dev log-ppl {mean_ppl:.4}", step + 1);
            if best.as_ref().is_none_or(|(b, _)| mean_ppl < *b) {
                best = Some((mean_ppl, model.clone()));
            }
        }
    }

    let model = best.map(|(_, m)| m).unwrap_or(model);
    let mut final_metrics = BTreeMap::new();
    for task in tasks {
        final_metrics.insert(task.name.clone(), evaluate(&model, task, vocab, cfg)?);
    }
    Ok(TrainOutput { model, log, final_metrics, batches_per_task })
}

/// Teacher-forced log-perplexity and accuracy plus greedy exact match over
/// the task's dev split.
pub fn evaluate(
    model: &ModelParams,
    task: &TaskSpec,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let mut acc = MetricAccum::default();
    let mut rng = RngStream::new(0); // eval draws nothing
    for b in 0..cfg.dev_batches {
        let batch = make_batch(task, vocab, cfg.seed, DEV_BASE + b * cfg.batch_size, cfg.batch_size)?;
        let mut tape = Tape::inference();
        let out = forward_teacher_forced(&mut tape, model, &batch, false, &mut rng)?;
        acc.add_forward(&batch, &out);

        let max_len = match &batch.target {
            BatchTarget::Tokens(rows) => {
                rows.iter().map(|r| r.len()).max().unwrap_or(1) + cfg.gen_slack
            }
            BatchTarget::Class(_) => 1,
        };
        let generated = generate(model, &batch, max_len)?;
        acc.add_generated(&batch, &generated);
    }
    Ok(acc.finish())
}
