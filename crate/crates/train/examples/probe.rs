//! Scratch probe: per-step wall time and dev-accuracy trajectory.
use mm_data::{command_names, vocab_corpus, TaskKind, TaskSpec, Vocab};
use mm_model::{ModelConfig, ModelParams};
use mm_train::{train, AdamConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let dropout: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.4);
    let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200);
    let depth: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);

    let task = TaskSpec {
        name: "copy".into(), command: 0,
        kind: TaskKind::Copy { min_words: 4, max_words: 9 },
        train_budget: 2048,
    };
    let tasks = vec![task.clone()];
    let corpus = vocab_corpus(&tasks, 11, 64);
    let vocab = Vocab::learn(&corpus, 120, &command_names(&tasks)).unwrap();

    let cfg = ModelConfig {
        depth, heads: depth / 8, n_experts: 4, moe_k: 2, w_balance: 0.01,
        dropout, vocab_size: vocab.size(), n_tasks: 1, n_classes: 4,
        use_moe: true, use_attention: true,
    };
    let model = ModelParams::new(cfg, 11).unwrap();
    let tc = TrainConfig {
        steps, batch_size: 16, eval_interval: 100, dev_batches: 1, seed: 11,
        adam: AdamConfig { lr, clip_norm: 5.0, ..AdamConfig::default() },
        gen_slack: 2,
    };
    let t0 = std::time::Instant::now();
    let out = train(model, &tasks, &vocab, &tc).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("lr {lr} dropout {dropout} depth {depth}: {steps} steps in {dt:.1}s ({:.3} s/step)", dt / steps as f64);
    println!("{}", out.log);
}
