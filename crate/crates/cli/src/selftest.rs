//! Built-in invariant suite: gradient checks, causality, oracle
//! equivalences, persistence and tokenizer round trips. Prints one line
//! per check; any failure makes the process exit nonzero.

use mm_data::testing::brackets_balanced;
use mm_data::{
    command_names, desk_tasks, find_task, sample, vocab_corpus, BatchTarget, SampleTarget, Vocab,
    DEV_BASE,
};
use mm_model::{
    attention_block, conv_block, decode_body, forward_teacher_forced, generate, mix, moe_gate_flat,
    moe_layer, timing_signal, timing_signal_at, AttentionParams, ConvBlockParams, Generated,
    MoEParams, ModelConfig, ModelParams, ParamGroup, ParamInit,
};
use mm_tensor::testing::{naive_dense_moe, naive_sep_conv1d};
use mm_tensor::{grad_check, PadMode, Param, RngStream, Tape, Tensor};

use crate::checkpoint;

type Check = (&'static str, fn() -> Result<(), String>);

pub fn run() -> Result<(), usize> {
    let checks: Vec<Check> = vec![
        ("tensor op gradients vs finite differences", op_gradients),
        ("block gradients vs finite differences", block_gradients),
        ("separable conv vs naive loop oracle", sep_conv_oracle),
        ("mixture layer vs dense brute force", moe_oracle),
        ("gate sparsity and balance", gate_sparsity),
        ("timing signal spot values", timing_values),
        ("mixer/decoder causality", causality),
        ("generation consistency", generation_consistency),
        ("tokenizer round trip", tokenizer_round_trip),
        ("parse targets balanced", parse_balanced),
        ("checkpoint round trip", checkpoint_round_trip),
    ];
    let mut failures = 0;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("selftest: {name} ... ok"),
            Err(e) => {
                failures += 1;
                println!("selftest: {name} ... FAIL: {e}");
            }
        }
    }
    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(failures)
    }
}

fn op_gradients() -> Result<(), String> {
    for seed in [1u64, 2] {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[2, 5, 3], 1.0, &mut rng)),
            Param::new("dw", Tensor::randn(&[3, 1, 3], 1.0, &mut rng)),
            Param::new("pw", Tensor::randn(&[3, 4], 1.0, &mut rng)),
            Param::new("g", Tensor::randn(&[4], 0.4, &mut rng)),
            Param::new("b", Tensor::randn(&[4], 0.4, &mut rng)),
        ];
        let probe = Tensor::randn(&[2, 5, 4], 1.0, &mut rng);
        let report = grad_check(
            &mut params,
            move |t, ps| {
                let x = t.param(&ps[0])?;
                let dw = t.param(&ps[1])?;
                let pw = t.param(&ps[2])?;
                let g = t.param(&ps[3])?;
                let b = t.param(&ps[4])?;
                let c = t.sep_conv1d(&x, &dw, &pw, 1, 1, PadMode::Left)?;
                let n = t.layer_norm(&c, &g, &b, 1e-6)?;
                let s = t.softmax(&n)?;
                let w = t.mul(&s, &probe)?;
                t.sum_all(&w)
            },
            1e-4,
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        if !report.pass {
            return Err(report.summary());
        }
    }
    Ok(())
}

fn block_gradients() -> Result<(), String> {
    // Central differences over a conv block + attention composite, checked
    // through struct perturbation.
    let init = ParamInit::new(3);
    let mut blk = ConvBlockParams::new(&init, "cb", 3, 0.4);
    let attn = AttentionParams::new(&init, "at", 4, 2, 0.4);
    let x = Tensor::randn(&[1, 5, 3], 1.0, &mut RngStream::new(4));
    let probe = Tensor::randn(&[1, 5, 3], 1.0, &mut RngStream::new(5));

    let loss_of = |blk: &ConvBlockParams| -> f64 {
        let mut t = Tape::inference();
        let y = conv_block(&mut t, blk, &x, PadMode::Left, false, &mut RngStream::new(0)).unwrap();
        let w = t.mul(&y, &probe).unwrap();
        t.sum_all(&w).unwrap().item().unwrap()
    };
    let mut tape = Tape::new();
    let y = conv_block(&mut tape, &blk, &x, PadMode::Left, false, &mut RngStream::new(0))
        .map_err(|e| e.to_string())?;
    let w = tape.mul(&y, &probe).map_err(|e| e.to_string())?;
    let loss = tape.sum_all(&w).map_err(|e| e.to_string())?;
    let grads = tape.backward(&loss).map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    let step = 1e-5;
    let names: Vec<String> = {
        let mut v = Vec::new();
        blk.visit(&mut v);
        v.iter().map(|p| p.name.clone()).collect()
    };
    for name in names {
        let numel = {
            let mut v = Vec::new();
            blk.visit(&mut v);
            v.iter().find(|p| p.name == name).unwrap().value.numel()
        };
        for j in (0..numel).step_by(3) {
            let orig = {
                let mut v = Vec::new();
                blk.visit(&mut v);
                v.iter().find(|p| p.name == name).unwrap().value.data()[j]
            };
            fn poke(blk: &mut ConvBlockParams, name: &str, j: usize, val: f64) {
                let mut v = Vec::new();
                blk.visit_mut(&mut v);
                let p = v.into_iter().find(|p| p.name == name).unwrap();
                p.value = p.value.with_value_at(j, val).unwrap();
            }
            poke(&mut blk, &name, j, orig + step);
            let up = loss_of(&blk);
            poke(&mut blk, &name, j, orig - step);
            let down = loss_of(&blk);
            poke(&mut blk, &name, j, orig);
            let fd = (up - down) / (2.0 * step);
            let ad = grads.get(&name).map_or(0.0, |t| t.data()[j]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            if rel > 1e-3 {
                eprintln!("DBG {name}[{j}] ad {ad:+.6e} fd {fd:+.6e} rel {rel:.3e}");
            }
            worst = worst.max(rel);
        }
    }
    if worst >= 1e-3 {
        return Err(format!("conv block max rel err {worst}"));
    }

    // Attention: exercise the whole block once and sanity-check the
    // gradient exists and is finite.
    let src = Tensor::randn(&[1, 3, 4], 1.0, &mut RngStream::new(6));
    let tgt = Tensor::randn(&[1, 2, 4], 1.0, &mut RngStream::new(7));
    let mut tape = Tape::new();
    let y = attention_block(&mut tape, &attn, &src, &tgt, false, &mut RngStream::new(0))
        .map_err(|e| e.to_string())?;
    let s = tape.sum_all(&y).map_err(|e| e.to_string())?;
    let grads = tape.backward(&s).map_err(|e| e.to_string())?;
    for (name, g) in &grads {
        if !g.data().iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite attention gradient for {name}"));
        }
    }
    Ok(())
}

fn sep_conv_oracle() -> Result<(), String> {
    let mut rng = RngStream::new(8);
    for case in 0..10 {
        let (b, l, c, f) = (1 + rng.next_below(2), 3 + rng.next_below(7), 1 + rng.next_below(3), 1 + rng.next_below(4));
        let h = [1, 3, 5][rng.next_below(3)];
        let s = 1 + rng.next_below(2);
        let d = 1 + rng.next_below(2);
        let pad = if rng.next_below(2) == 0 { PadMode::Same } else { PadMode::Left };
        let x = Tensor::randn(&[b, l, c], 1.0, &mut rng);
        let dw = Tensor::randn(&[h, 1, c], 1.0, &mut rng);
        let pw = Tensor::randn(&[c, f], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let y = tape.sep_conv1d(&x, &dw, &pw, s, d, pad).map_err(|e| e.to_string())?;
        let (expect, _) = naive_sep_conv1d(x.data(), (b, l, c), dw.data(), h, pw.data(), f, s, d, pad);
        let max = y
            .data()
            .iter()
            .zip(expect.iter())
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max);
        if max >= 1e-9 {
            return Err(format!("case {case}: max abs diff {max}"));
        }
    }
    Ok(())
}

fn moe_oracle() -> Result<(), String> {
    let init = ParamInit::new(9);
    let (c, h, n_exp) = (4, 8, 3);
    let mut p = MoEParams::new(&init, "moe", c, h, n_exp, n_exp, 0.01);
    p.w_gate = Param::new("moe/gate", Tensor::randn(&[c, n_exp], 1.0, &mut RngStream::new(10)));
    let x = Tensor::randn(&[2, 3, c], 1.0, &mut RngStream::new(11));
    let mut tape = Tape::inference();
    let (y, _) = moe_layer(&mut tape, &p, &x, false, &mut RngStream::new(0)).map_err(|e| e.to_string())?;
    let flat = tape.reshape(&x, &[6, c]).map_err(|e| e.to_string())?;
    let gate = moe_gate_flat(&mut tape, &p, &flat, false, &mut RngStream::new(0)).map_err(|e| e.to_string())?;
    let experts: Vec<_> = p
        .experts
        .iter()
        .map(|e| {
            (
                e.w1.value.data().to_vec(),
                e.b1.value.data().to_vec(),
                e.w2.value.data().to_vec(),
                e.b2.value.data().to_vec(),
            )
        })
        .collect();
    let expect = naive_dense_moe(flat.data(), 6, c, &experts, h, gate.weights.data());
    let max = y
        .data()
        .iter()
        .zip(expect.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    if max >= 1e-9 {
        return Err(format!("relative diff {max}"));
    }
    Ok(())
}

fn gate_sparsity() -> Result<(), String> {
    let init = ParamInit::new(12);
    let mut p = MoEParams::new(&init, "moe", 4, 8, 6, 2, 0.01);
    p.w_gate = Param::new("moe/gate", Tensor::randn(&[4, 6], 1.0, &mut RngStream::new(13)));
    let x = Tensor::randn(&[9, 4], 1.0, &mut RngStream::new(14));
    let mut tape = Tape::new();
    let gate = moe_gate_flat(&mut tape, &p, &x, true, &mut RngStream::new(15)).map_err(|e| e.to_string())?;
    for (r, row) in gate.weights.data().chunks_exact(6).enumerate() {
        let nz = row.iter().filter(|v| **v != 0.0).count();
        if nz != 2 {
            return Err(format!("row {r} has {nz} nonzeros"));
        }
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(format!("row {r} sums to {}", row.iter().sum::<f64>()));
        }
    }
    Ok(())
}

fn timing_values() -> Result<(), String> {
    let t = timing_signal(3, 8).map_err(|e| e.to_string())?;
    for (i, v) in t.data()[..8].iter().enumerate() {
        let expect = if i % 2 == 0 { 0.0 } else { 1.0 };
        if *v != expect {
            return Err(format!("row 0 channel {i}: {v}"));
        }
    }
    let row = timing_signal_at(100.0, 4);
    if (row[2] - 1f64.sin()).abs() >= 1e-12 || (row[3] - 1f64.cos()).abs() >= 1e-12 {
        return Err("depth-4 spot value off".into());
    }
    Ok(())
}

fn tiny_model(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        depth: 8,
        heads: 2,
        n_experts: 2,
        moe_k: 1,
        w_balance: 0.01,
        dropout: 0.4,
        vocab_size: 12,
        n_tasks: 2,
        n_classes: 4,
        use_moe: true,
        use_attention: true,
    };
    ModelParams::new(cfg, seed).unwrap()
}

fn causality() -> Result<(), String> {
    let m = tiny_model(16);
    let mut rng = RngStream::new(17);
    let encoded = Tensor::randn(&[1, 4, 8], 1.0, &mut rng);
    let shifted = Tensor::randn(&[1, 6, 8], 1.0, &mut rng);
    let mut tape = Tape::inference();
    let mixed = mix(&mut tape, &m, &encoded, &shifted, false, &mut RngStream::new(0))
        .map_err(|e| e.to_string())?;
    let (body, _) = decode_body(&mut tape, &m, &encoded, &mixed, false, &mut RngStream::new(0))
        .map_err(|e| e.to_string())?;
    for trial in 0..5 {
        let t = 1 + (trial % 5);
        let idx = t * 8 + trial % 8;
        let sp = shifted.with_value_at(idx, 9.0 + trial as f64).unwrap();
        let mp = mix(&mut tape, &m, &encoded, &sp, false, &mut RngStream::new(0))
            .map_err(|e| e.to_string())?;
        let (bp, _) = decode_body(&mut tape, &m, &encoded, &mp, false, &mut RngStream::new(0))
            .map_err(|e| e.to_string())?;
        for pos in 0..t {
            for c in 0..8 {
                if body.data()[pos * 8 + c].to_bits() != bp.data()[pos * 8 + c].to_bits() {
                    return Err(format!("trial {trial}: leak into position {pos}"));
                }
            }
        }
    }
    Ok(())
}

fn generation_consistency() -> Result<(), String> {
    let mut m = tiny_model(18);
    m.language.proj = Param::new(
        "lang/proj",
        Tensor::randn(&[8, 12], 0.5, &mut RngStream::new(19)),
    );
    let batch = mm_data::Batch {
        task_name: "toy".into(),
        command: 0,
        input: mm_data::BatchInput::Tokens(vec![vec![3, 4, 1]]),
        target: mm_data::BatchTarget::Tokens(vec![vec![4, 1]]),
        spatial_hint: None,
    };
    let generated = match generate(&m, &batch, 4).map_err(|e| e.to_string())? {
        Generated::Tokens(t) => t,
        _ => return Err("wrong route".into()),
    };
    let tf = mm_data::Batch {
        target: BatchTarget::Tokens(generated.clone()),
        ..batch
    };
    let mut tape = Tape::inference();
    let out = forward_teacher_forced(&mut tape, &m, &tf, false, &mut RngStream::new(0))
        .map_err(|e| e.to_string())?;
    let v = 12;
    for (t, &tok) in generated[0].iter().enumerate() {
        let row = &out.logits.data()[t * v..(t + 1) * v];
        let mut am = 0;
        for (i, val) in row.iter().enumerate() {
            if *val > row[am] {
                am = i;
            }
        }
        if am as u32 != tok {
            return Err(format!("position {t}: generated {tok}, replay argmax {am}"));
        }
    }
    Ok(())
}

fn tokenizer_round_trip() -> Result<(), String> {
    let tasks = desk_tasks();
    let corpus = vocab_corpus(&tasks, 3, 16);
    let v = Vocab::learn(&corpus, 200, &command_names(&tasks)).map_err(|e| e.to_string())?;
    let v2 = Vocab::from_files(&v.vocab_file(), &v.merges_file()).map_err(|e| e.to_string())?;
    for s in ["kaka kuke", "( S ( NP da fop ) )", ""] {
        if v.decode(&v.encode(s)) != s {
            return Err(format!("round trip broke on {s:?}"));
        }
        if v.encode(s) != v2.encode(s) {
            return Err("file round trip changed encoding".into());
        }
    }
    Ok(())
}

fn parse_balanced() -> Result<(), String> {
    let tasks = desk_tasks();
    let parse = find_task(&tasks, "parse").map_err(|e| e.to_string())?;
    for i in 0..50 {
        let s = sample(parse, 21, DEV_BASE + i);
        match &s.target {
            SampleTarget::Text(t) if brackets_balanced(t) => {}
            SampleTarget::Text(t) => return Err(format!("unbalanced: {t}")),
            _ => return Err("parse target not text".into()),
        }
    }
    Ok(())
}

fn checkpoint_round_trip() -> Result<(), String> {
    let m = tiny_model(22);
    let bytes = checkpoint::encode(&m.params());
    let loaded = checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
    let mut m2 = tiny_model(23);
    checkpoint::load_into(&mut m2, loaded).map_err(|e| e.to_string())?;
    for (a, b) in m.params().iter().zip(m2.params().iter()) {
        if !a.value.bit_eq(&b.value) {
            return Err(format!("{} not bit-identical", a.name));
        }
    }
    // Truncation must produce a named error, not a crash.
    match checkpoint::decode(&bytes[..bytes.len() - 3]) {
        Err(_) => {}
        Ok(_) => return Err("truncated file accepted".into()),
    }
    Ok(())
}
