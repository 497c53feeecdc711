//! The experiment battery: joint-vs-single comparison, low-data transfer
//! onto the parse analog, and the block ablations, emitted as aligned
//! text tables.

use std::fmt::Write as _;

use log::info;
use mm_data::{command_names, desk_tasks_with, find_task, vocab_corpus, TaskKind, TaskSpec, Vocab};
use mm_model::{ModelConfig, ModelParams};

use crate::adam::AdamConfig;
use crate::error::Result;
use crate::metrics::Metrics;
use crate::trainer::{evaluate, train, TrainConfig};

/// Battery scale knobs. The battery reproduces the experimental
/// methodology at a reduced size: every condition inside one comparison
/// gets the same number of parameter updates.
#[derive(Debug, Clone)]
pub struct BatteryConfig {
    pub seed: u64,
    pub depth: usize,
    pub heads: usize,
    /// Expert pool for joint conditions; single-task conditions use a
    /// quarter of it (the 4:1 joint-to-single pool ratio), with k scaled
    /// to stay below the pool size.
    pub experts_joint: usize,
    pub k_joint: usize,
    pub vocab_size: usize,
    pub batch_size: usize,
    /// Updates per condition in the joint-vs-single comparison.
    pub compare_steps: usize,
    /// Updates per condition in the low-data parse comparison.
    pub lowdata_steps: usize,
    /// Updates per condition in the ablation comparison.
    pub ablation_steps: usize,
    /// Train-sample budget for the low-data parse condition.
    pub parse_low_budget: usize,
    pub eval_interval: usize,
    pub dev_batches: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            seed: 12,
            depth: 32,
            heads: 4,
            experts_joint: 8,
            k_joint: 2,
            vocab_size: 256,
            batch_size: 8,
            compare_steps: 1200,
            lowdata_steps: 900,
            ablation_steps: 900,
            parse_low_budget: 64,
            eval_interval: 300,
            dev_batches: 2,
        }
    }
}

/// One evaluated cell of a report table.
#[derive(Debug, Clone)]
pub struct ConditionRow {
    pub table: &'static str,
    pub task: String,
    pub condition: String,
    pub metrics: Metrics,
}

/// Structured battery result plus a rendered text report.
#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub header: String,
    pub rows: Vec<ConditionRow>,
}

impl BatteryReport {
    pub fn get(&self, table: &str, task: &str, condition: &str) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.table == table && r.task == task && r.condition == condition)
            .map(|r| &r.metrics)
    }

    /// Aligned text tables with log-ppl / accuracy / exact-match columns.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header);
        out.push('\n');
        for table in ["joint-vs-single", "parse-low-data", "block-ablation"] {
            let rows: Vec<&ConditionRow> = self.rows.iter().filter(|r| r.table == table).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "== {table} ==");
            let _ = writeln!(
                out,
                "{:<10} {:<16} {:>10} {:>10} {:>10}",
                "task", "condition", "log-ppl", "accuracy", "exact"
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<10} {:<16} {:>10.4} {:>10.4} {:>10.4}",
                    r.task, r.condition, r.metrics.log_ppl, r.metrics.accuracy, r.metrics.exact_match
                );
            }
            out.push('\n');
        }
        out
    }
}

fn model_config(cfg: &BatteryConfig, vocab: &Vocab, n_tasks: usize, joint: bool) -> ModelConfig {
    let mut mc = ModelConfig::desk(vocab.size(), n_tasks);
    mc.depth = cfg.depth;
    mc.heads = cfg.heads;
    if joint {
        mc.n_experts = cfg.experts_joint;
        mc.moe_k = cfg.k_joint;
    } else {
        mc.n_experts = (cfg.experts_joint / 4).max(2);
        mc.moe_k = (cfg.k_joint / 2).max(1).min(mc.n_experts - 1);
    }
    mc
}

fn train_config(cfg: &BatteryConfig, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: cfg.batch_size,
        eval_interval: cfg.eval_interval,
        dev_batches: cfg.dev_batches,
        seed: cfg.seed,
        adam: AdamConfig::default(),
        gen_slack: 2,
    }
}

/// Runs the full battery. Conditions inside each comparison share the
/// update count, the seed, the vocabulary and the dev splits.
pub fn experiment_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    // One roster and one shared vocabulary serve every run; single-task
    // runs keep the full command table so command ids stay stable.
    let full = desk_tasks_with(512, cfg.parse_low_budget);
    let corpus = vocab_corpus(&full, cfg.seed, 48);
    let reserved = 3 + full.len();
    let vocab = Vocab::learn(&corpus, cfg.vocab_size.saturating_sub(reserved), &command_names(&full))?;
    let n_tasks = full.len();

    let mut rows = Vec::new();
    let header = format!(
        "experiment battery: depth {}, vocab {}, batch {}, seed {}\n\
         update budgets are equal across the conditions of each comparison\n\
         (joint-vs-single {}, parse-low-data {}, block-ablation {})",
        cfg.depth,
        vocab.size(),
        cfg.batch_size,
        cfg.seed,
        cfg.compare_steps,
        cfg.lowdata_steps,
        cfg.ablation_steps,
    );

    // Joint vs single on the varied tasks.
    let compare_on = ["tr-ab", "parse", "img4", "audio4"];
    info!("battery: joint run ({} steps)", cfg.compare_steps);
    let joint_model = ModelParams::new(model_config(cfg, &vocab, n_tasks, true), cfg.seed)?;
    let joint = train(joint_model, &full, &vocab, &train_config(cfg, cfg.compare_steps))?;
    for name in compare_on {
        rows.push(ConditionRow {
            table: "joint-vs-single",
            task: name.into(),
            condition: "joint".into(),
            metrics: joint.final_metrics[name],
        });
    }
    for name in compare_on {
        info!("battery: single run on {name}");
        let task = find_task(&full, name)?.clone();
        let model = ModelParams::new(model_config(cfg, &vocab, n_tasks, false), cfg.seed)?;
        let single = train(
            model,
            std::slice::from_ref(&task),
            &vocab,
            &train_config(cfg, cfg.compare_steps),
        )?;
        rows.push(ConditionRow {
            table: "joint-vs-single",
            task: name.into(),
            condition: "single".into(),
            metrics: single.final_metrics[name],
        });
    }

    // Low-data parse transfer: alone, with the image task, with all tasks.
    let parse = find_task(&full, "parse")?.clone();
    let img = find_task(&full, "img4")?.clone();
    let conditions: Vec<(String, Vec<TaskSpec>)> = vec![
        ("alone".into(), vec![parse.clone()]),
        ("with-image".into(), vec![parse.clone(), img.clone()]),
        ("with-all".into(), full.clone()),
    ];
    for (cond, tasks) in conditions {
        info!("battery: parse low-data condition {cond}");
        let joint = tasks.len() > 1;
        let model = ModelParams::new(model_config(cfg, &vocab, n_tasks, joint), cfg.seed)?;
        let out = train(model, &tasks, &vocab, &train_config(cfg, cfg.lowdata_steps))?;
        rows.push(ConditionRow {
            table: "parse-low-data",
            task: "parse".into(),
            condition: cond,
            metrics: out.final_metrics["parse"],
        });
    }

    // Block ablations on a translation analog and the image analog,
    // evaluated on sequences longer than anything seen in training.
    let tr = find_task(&full, "tr-ab")?.clone();
    let tr_long = TaskSpec {
        kind: TaskKind::Translate {
            pair: mm_data::LangPair::Ab,
            min_words: 11,
            max_words: 14,
        },
        ..tr.clone()
    };
    let pair = vec![tr.clone(), img.clone()];
    for (cond, use_moe, use_attention) in [
        ("all-blocks", true, true),
        ("no-moe", false, true),
        ("no-attention", true, false),
    ] {
        info!("battery: ablation condition {cond}");
        let mut mc = model_config(cfg, &vocab, n_tasks, true);
        mc.use_moe = use_moe;
        mc.use_attention = use_attention;
        let model = ModelParams::new(mc, cfg.seed)?;
        let out = train(model, &pair, &vocab, &train_config(cfg, cfg.ablation_steps))?;
        let tcfg = train_config(cfg, cfg.ablation_steps);
        let tr_metrics = evaluate(&out.model, &tr_long, &vocab, &tcfg)?;
        rows.push(ConditionRow {
            table: "block-ablation",
            task: "tr-ab".into(),
            condition: cond.into(),
            metrics: tr_metrics,
        });
        rows.push(ConditionRow {
            table: "block-ablation",
            task: "img4".into(),
            condition: cond.into(),
            metrics: out.final_metrics["img4"],
        });
    }

    Ok(BatteryReport { header, rows })
}
