//! Scratch probe: per-position accuracy on copy.
use mm_data::{command_names, make_batch, vocab_corpus, BatchTarget, TaskKind, TaskSpec, Vocab};
use mm_model::{forward_teacher_forced, ModelConfig, ModelParams};
use mm_tensor::{RngStream, Tape};
use mm_train::{adam_step, AdamConfig, OptState};

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(900);
    let task = TaskSpec {
        name: "copy".into(), command: 0,
        kind: TaskKind::Copy { min_words: 5, max_words: 5 },
        train_budget: 2048,
    };
    let tasks = vec![task.clone()];
    let corpus = vocab_corpus(&tasks, 11, 64);
    let vocab = Vocab::learn(&corpus, 120, &command_names(&tasks)).unwrap();
    let cfg = ModelConfig {
        depth: 32, heads: 4, n_experts: 4, moe_k: 2, w_balance: 0.01,
        dropout: 0.0, vocab_size: vocab.size(), n_tasks: 1, n_classes: 4,
        use_moe: std::env::var("NOMOE").is_err(), use_attention: true,
    };
    let mut model = ModelParams::new(cfg, 11).unwrap();
    let mut opt = OptState::new(AdamConfig { lr: std::env::var("LR").map(|s| s.parse().unwrap()).unwrap_or(1e-2), clip_norm: 5.0, ..AdamConfig::default() });
    for step in 0..steps {
        let batch = make_batch(&task, &vocab, 11, (step * 16) % 2048, 16).unwrap();
        let mut tape = Tape::new();
        let mut rng = RngStream::new(11).derive(0xFEED).derive(step as u64);
        let out = forward_teacher_forced(&mut tape, &model, &batch, true, &mut rng).unwrap();
        let grads = tape.backward(&out.loss).unwrap();
        drop(tape);
        adam_step(&mut model.params_mut(), &grads, &mut opt).unwrap();
        if (step + 1) % 300 == 0 {
            let dev = make_batch(&task, &vocab, 11, mm_data::DEV_BASE, 16).unwrap();
            let mut t = Tape::inference();
            let o = forward_teacher_forced(&mut t, &model, &dev, false, &mut RngStream::new(0)).unwrap();
            let rows = match &dev.target { BatchTarget::Tokens(r) => r.clone(), _ => unreachable!() };
            let v = vocab.size();
            let lo = o.logits.shape()[1];
            let mut per_pos = vec![(0usize, 0usize); lo];
            for (r, row) in rows.iter().enumerate() {
                for (t_i, &tok) in row.iter().enumerate() {
                    let cell = &o.logits.data()[(r * lo + t_i) * v..(r * lo + t_i + 1) * v];
                    let mut am = 0;
                    for (i, val) in cell.iter().enumerate() { if *val > cell[am] { am = i; } }
                    per_pos[t_i].1 += 1;
                    if am as u32 == tok { per_pos[t_i].0 += 1; }
                }
            }
            let accs: Vec<String> = per_pos.iter().map(|(h, n)| if *n > 0 { format!("{:.2}", *h as f64 / *n as f64) } else { "-".into() }).collect();
            println!("step {}: ce {:.3} per-position acc {:?}", step + 1, o.ce.data()[0], accs);
        }
    }
}
