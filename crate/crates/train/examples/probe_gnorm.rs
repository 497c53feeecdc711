//! Scratch probe: gradient-norm spectrum by layer group.
use mm_data::{command_names, make_batch, vocab_corpus, TaskKind, TaskSpec, Vocab};
use mm_model::{forward_teacher_forced, ModelConfig, ModelParams};
use mm_tensor::{RngStream, Tape};
use mm_train::{adam_step, AdamConfig, OptState};
use std::collections::BTreeMap;

fn main() {
    let task = TaskSpec {
        name: "copy".into(), command: 0,
        kind: TaskKind::Copy { min_words: 4, max_words: 9 },
        train_budget: 2048,
    };
    let tasks = vec![task.clone()];
    let corpus = vocab_corpus(&tasks, 11, 64);
    let vocab = Vocab::learn(&corpus, 120, &command_names(&tasks)).unwrap();

    let cfg = ModelConfig {
        depth: 32, heads: 4, n_experts: 4, moe_k: 2, w_balance: 0.01,
        dropout: 0.0, vocab_size: vocab.size(), n_tasks: 1, n_classes: 4,
        use_moe: true, use_attention: true,
    };
    let mut model = ModelParams::new(cfg, 11).unwrap();
    let mut opt = OptState::new(AdamConfig { lr: 3e-3, clip_norm: 5.0, ..AdamConfig::default() });
    for step in 0..120 {
        let batch = make_batch(&task, &vocab, 11, (step * 16) % 2048, 16).unwrap();
        let mut tape = Tape::new();
        let mut rng = RngStream::new(11).derive(0xFEED).derive(step as u64);
        let out = forward_teacher_forced(&mut tape, &model, &batch, true, &mut rng).unwrap();
        let grads = tape.backward(&out.loss).unwrap();
        drop(tape);
        if step == 100 {
            let mut groups: BTreeMap<String, f64> = BTreeMap::new();
            for (name, g) in &grads {
                let key = name.split('/').take(2).collect::<Vec<_>>().join("/");
                *groups.entry(key).or_insert(0.0) += g.data().iter().map(|v| v * v).sum::<f64>();
            }
            println!("loss {:.4}", out.loss.data()[0]);
            for (k, v) in groups {
                println!("  {k:<14} grad norm {:.3e}", v.sqrt());
            }
        }
        adam_step(&mut model.params_mut(), &grads, &mut opt).unwrap();
    }
}
