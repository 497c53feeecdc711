//! Scratch pilot: joint training to calibrate stability and budgets.
use mm_data::{command_names, desk_tasks, vocab_corpus, Vocab};
use mm_model::{ModelConfig, ModelParams};
use mm_train::{train, AdamConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.5e-3);
    let clip: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let depth: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);
    let dropout: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.4);
    let seed = 1234u64;
    let tasks = desk_tasks();
    let corpus = vocab_corpus(&tasks, seed, 64);
    let reserved = 3 + tasks.len();
    let vocab = Vocab::learn(&corpus, 512 - reserved, &command_names(&tasks)).unwrap();

    let mut cfg = ModelConfig::desk(vocab.size(), tasks.len());
    cfg.depth = depth;
    cfg.heads = depth / 8;
    cfg.dropout = dropout;
    let model = ModelParams::new(cfg, seed).unwrap();

    let tc = TrainConfig {
        steps,
        batch_size: 16,
        eval_interval: 1000,
        dev_batches: 1,
        seed,
        adam: AdamConfig { lr, clip_norm: clip, ..AdamConfig::default() },
        gen_slack: 2,
    };
    let t0 = std::time::Instant::now();
    let out = train(model, &tasks, &vocab, &tc).unwrap();
    println!("steps {steps} lr {lr} clip {clip} depth {depth} dropout {dropout}: {:.0}s ({:.3} s/step)", t0.elapsed().as_secs_f64(), t0.elapsed().as_secs_f64() / steps as f64);
    println!("{}", out.log);
}
