//! Block semantics: convolution steps/blocks, timing signals, attention,
//! and the mixture-of-experts layer, against hand values, independent
//! oracles and finite differences.

mod common;

use common::{fd_check, FD_STEP};
use mm_model::{
    attention_block, conv_block, conv_step, moe_gate_flat, moe_layer, timing_signal,
    timing_signal_at, AttentionParams, ConvBlockParams, ConvStepParams, MoEParams, ParamGroup,
    ParamInit,
};
use mm_tensor::testing::naive_dense_moe;
use mm_tensor::{PadMode, RngStream, Tape, Tensor};

fn rng(seed: u64) -> RngStream {
    RngStream::new(seed)
}

#[test]
fn conv_step_zero_input_collapses_to_shift() {
    let init = ParamInit::new(1);
    let mut p = ConvStepParams::new(&init, "cs", (3, 1), 4, 4, (1, 1), (1, 1));
    // Give the shift a recognizable value.
    p.shift = mm_tensor::Param::new("cs/b", Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
    let x = Tensor::zeros(&[2, 5, 4]);
    let mut tape = Tape::inference();
    let y = conv_step(&mut tape, &p, &x, PadMode::Same).unwrap();
    for row in y.data().chunks_exact(4) {
        assert_eq!(row, &[0.5, -1.0, 2.0, 0.0]);
    }
}

#[test]
fn conv_step_equals_manual_composition_bitwise() {
    let init = ParamInit::new(2);
    let p = ConvStepParams::new(&init, "cs", (3, 1), 3, 5, (1, 1), (1, 1));
    let x = Tensor::randn(&[1, 6, 3], 1.0, &mut rng(3));
    let mut tape = Tape::inference();
    let y = conv_step(&mut tape, &p, &x, PadMode::Same).unwrap();

    let r = tape.relu(&x).unwrap();
    let c = tape
        .sep_conv1d(&r, &p.dw.value, &p.pw.value, 1, 1, PadMode::Same)
        .unwrap();
    let manual = tape
        .layer_norm(&c, &p.gain.value, &p.shift.value, p.eps)
        .unwrap();
    assert!(y.bit_eq(&manual));
}

#[test]
fn conv_step_grad_check() {
    let init = ParamInit::new(3);
    let mut p = ConvStepParams::new(&init, "cs", (3, 1), 3, 3, (1, 1), (1, 1));
    let x = Tensor::randn(&[1, 5, 3], 1.0, &mut rng(4));
    let probe = Tensor::randn(&[1, 5, 3], 1.0, &mut rng(5));

    let mut tape = Tape::new();
    let y = conv_step(&mut tape, &p, &x, PadMode::Same).unwrap();
    let w = tape.mul(&y, &probe).unwrap();
    let loss = tape.sum_all(&w).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let (max_rel, worst) = fd_check(
        &mut p,
        |p| {
            let mut v = Vec::new();
            p.visit_mut(&mut v);
            v
        },
        |p| {
            let mut t = Tape::inference();
            let y = conv_step(&mut t, p, &x, PadMode::Same).unwrap();
            let w = t.mul(&y, &probe).unwrap();
            t.sum_all(&w).unwrap().item().unwrap()
        },
        &grads,
        &[],
        FD_STEP,
    );
    assert!(max_rel < 1e-4, "max rel {max_rel} at {worst}");
}

#[test]
fn conv_block_preserves_shape_and_is_causal() {
    let init = ParamInit::new(6);
    let p = ConvBlockParams::new(&init, "cb", 4, 0.4);
    let x = Tensor::randn(&[2, 7, 4], 1.0, &mut rng(7));
    let mut tape = Tape::inference();
    let mut r = rng(0);
    let y = conv_block(&mut tape, &p, &x, PadMode::Left, false, &mut r).unwrap();
    assert_eq!(y.shape(), x.shape());

    // Perturb the last position: everything before it is bit-identical.
    let xp = x.with_value_at((2 - 1) * 7 * 4 + 6 * 4 + 1, 50.0).unwrap();
    let yp = conv_block(&mut tape, &p, &xp, PadMode::Left, false, &mut r).unwrap();
    for b in 0..2 {
        for t in 0..6 {
            for c in 0..4 {
                let i = (b * 7 + t) * 4 + c;
                assert_eq!(y.data()[i].to_bits(), yp.data()[i].to_bits());
            }
        }
    }
}

#[test]
fn conv_block_depth_mismatch_is_an_error() {
    let init = ParamInit::new(8);
    let p = ConvBlockParams::new(&init, "cb", 4, 0.4);
    let x = Tensor::zeros(&[1, 5, 3]);
    let mut tape = Tape::inference();
    assert!(conv_block(&mut tape, &p, &x, PadMode::Same, false, &mut rng(0)).is_err());
}

#[test]
fn conv_block_grad_check() {
    let init = ParamInit::new(9);
    let mut p = ConvBlockParams::new(&init, "cb", 3, 0.4);
    let x = Tensor::randn(&[1, 6, 3], 1.0, &mut rng(10));
    let probe = Tensor::randn(&[1, 6, 3], 1.0, &mut rng(11));

    let mut tape = Tape::new();
    let mut r = rng(0);
    // Dropout off: eval mode.
    let y = conv_block(&mut tape, &p, &x, PadMode::Left, false, &mut r).unwrap();
    let w = tape.mul(&y, &probe).unwrap();
    let loss = tape.sum_all(&w).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let (max_rel, worst) = fd_check(
        &mut p,
        |p| {
            let mut v = Vec::new();
            p.visit_mut(&mut v);
            v
        },
        |p| {
            let mut t = Tape::inference();
            let mut r = rng(0);
            let y = conv_block(&mut t, p, &x, PadMode::Left, false, &mut r).unwrap();
            let w = t.mul(&y, &probe).unwrap();
            t.sum_all(&w).unwrap().item().unwrap()
        },
        &grads,
        &[],
        FD_STEP,
    );
    assert!(max_rel < 1e-3, "max rel {max_rel} at {worst}");
}

#[test]
fn timing_signal_row_zero_alternates_zero_one() {
    for depth in [2usize, 4, 8, 64] {
        let t = timing_signal(3, depth).unwrap();
        for (i, v) in t.data()[..depth].iter().enumerate() {
            let expect = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(*v, expect, "depth {depth} channel {i}");
        }
    }
}

#[test]
fn timing_signal_depth2_is_plain_sin_cos() {
    // delta(0) = 1, so the row at position t is [sin t, cos t]; at t = pi/2
    // that is [1, 0].
    let row = timing_signal_at(std::f64::consts::FRAC_PI_2, 2);
    assert!((row[0] - 1.0).abs() < 1e-12);
    assert!(row[1].abs() < 1e-12);

    let table = timing_signal(5, 2).unwrap();
    for t in 0..5 {
        assert!((table.data()[t * 2] - (t as f64).sin()).abs() < 1e-15);
        assert!((table.data()[t * 2 + 1] - (t as f64).cos()).abs() < 1e-15);
    }
}

#[test]
fn timing_signal_depth4_spot_value() {
    // Channel pair (2,3) at t=100: delta(2) = 1e4^(-1/2) = 0.01, giving
    // [sin 1, cos 1].
    let row = timing_signal_at(100.0, 4);
    assert!((row[2] - 1f64.sin()).abs() < 1e-12);
    assert!((row[3] - 1f64.cos()).abs() < 1e-12);
}

#[test]
fn timing_signal_rejects_odd_depth_and_stays_bounded() {
    assert!(timing_signal(4, 5).is_err());
    let t = timing_signal(50, 8).unwrap();
    assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    // Column 0 has period 2*pi / delta(0) = 2*pi; check sin periodicity
    // through the formula.
    let a = timing_signal_at(1.0, 8);
    let b = timing_signal_at(1.0 + std::f64::consts::TAU, 8);
    assert!((a[0] - b[0]).abs() < 1e-9);
}

#[test]
fn attention_single_source_position_copies_its_value() {
    // With Ls = 1 the softmax over one key is 1, so every target position
    // receives exactly the (per-head) value of that source position.
    let init = ParamInit::new(12);
    let p = AttentionParams::new(&init, "attn", 4, 2, 0.4);
    let source = Tensor::randn(&[1, 1, 4], 1.0, &mut rng(13));
    let target = Tensor::randn(&[1, 5, 4], 1.0, &mut rng(14));
    let mut tape = Tape::inference();
    let y = attention_block(&mut tape, &p, &source, &target, false, &mut rng(0)).unwrap();

    let v = tape.pointwise_conv(&source, &p.wv.value).unwrap();
    for t in 0..5 {
        for c in 0..4 {
            assert!((y.data()[t * 4 + c] - v.data()[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_uniform_source_rows_average_to_the_value() {
    // All source positions identical -> weights are uniform and the
    // context equals the shared value row for every target position.
    let init = ParamInit::new(15);
    let p = AttentionParams::new(&init, "attn", 4, 2, 0.4);
    let row: Vec<f64> = vec![0.3, -0.7, 1.1, 0.2];
    let mut src = Vec::new();
    for _ in 0..6 {
        src.extend_from_slice(&row);
    }
    let source = Tensor::new(&[1, 6, 4], src).unwrap();
    let target = Tensor::randn(&[1, 3, 4], 1.0, &mut rng(16));
    let mut tape = Tape::inference();
    let y = attention_block(&mut tape, &p, &source, &target, false, &mut rng(0)).unwrap();
    let v = tape.pointwise_conv(&source, &p.wv.value).unwrap();
    for t in 0..3 {
        for c in 0..4 {
            assert!((y.data()[t * 4 + c] - v.data()[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn attention_grad_check() {
    let init = ParamInit::new(17);
    let mut p = AttentionParams::new(&init, "attn", 4, 2, 0.4);
    let source = Tensor::randn(&[1, 3, 4], 1.0, &mut rng(18));
    let target = Tensor::randn(&[1, 2, 4], 1.0, &mut rng(19));
    let probe = Tensor::randn(&[1, 2, 4], 1.0, &mut rng(20));

    let mut tape = Tape::new();
    let y = attention_block(&mut tape, &p, &source, &target, false, &mut rng(0)).unwrap();
    let w = tape.mul(&y, &probe).unwrap();
    let loss = tape.sum_all(&w).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let (max_rel, worst) = fd_check(
        &mut p,
        |p| {
            let mut v = Vec::new();
            p.visit_mut(&mut v);
            v
        },
        |p| {
            let mut t = Tape::inference();
            let y = attention_block(&mut t, p, &source, &target, false, &mut rng(0)).unwrap();
            let w = t.mul(&y, &probe).unwrap();
            t.sum_all(&w).unwrap().item().unwrap()
        },
        &grads,
        &[],
        FD_STEP,
    );
    assert!(max_rel < 1e-3, "max rel {max_rel} at {worst}");
}

#[test]
fn gate_with_k_equal_n_is_dense_softmax() {
    let init = ParamInit::new(21);
    let mut p = MoEParams::new(&init, "moe", 3, 6, 4, 4, 0.01);
    p.w_gate = mm_tensor::Param::new("moe/gate", Tensor::randn(&[3, 4], 1.0, &mut rng(22)));
    let x = Tensor::randn(&[5, 3], 1.0, &mut rng(23));
    let mut tape = Tape::inference();
    let gate = moe_gate_flat(&mut tape, &p, &x, false, &mut rng(0)).unwrap();
    let logits = tape.matmul(&x, &p.w_gate.value).unwrap();
    let dense = tape.softmax(&logits).unwrap();
    assert!(gate.weights.max_abs_diff(&dense).unwrap() < 1e-12);
}

#[test]
fn gate_rows_have_exactly_k_nonzeros_summing_to_one() {
    let init = ParamInit::new(24);
    let mut p = MoEParams::new(&init, "moe", 4, 8, 6, 2, 0.01);
    p.w_gate = mm_tensor::Param::new("moe/gate", Tensor::randn(&[4, 6], 1.0, &mut rng(25)));
    let x = Tensor::randn(&[7, 4], 1.0, &mut rng(26));
    // Training mode exercises the noise path too.
    let mut tape = Tape::new();
    let gate = moe_gate_flat(&mut tape, &p, &x, true, &mut rng(27)).unwrap();
    for row in gate.weights.data().chunks_exact(6) {
        let nonzeros = row.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzeros, 2);
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    // Importance tallies the weights.
    let by_hand: Vec<f64> = (0..6)
        .map(|e| (0..7).map(|r| gate.weights.data()[r * 6 + e]).sum())
        .collect();
    for (a, b) in gate.importance.data().iter().zip(by_hand.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gate_hand_case_top2_of_logits_10_0_0_0() {
    // The winner's weight is softmax over {10, 0} restricted to the top-2.
    let init = ParamInit::new(28);
    let mut p = MoEParams::new(&init, "moe", 4, 8, 4, 2, 0.01);
    // Identity gate: logits equal the input row.
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    p.w_gate = mm_tensor::Param::new("moe/gate", Tensor::new(&[4, 4], eye).unwrap());
    let x = Tensor::new(&[1, 4], vec![10.0, 0.0, 0.0, 0.0]).unwrap();
    let mut tape = Tape::inference();
    let gate = moe_gate_flat(&mut tape, &p, &x, false, &mut rng(0)).unwrap();
    let w = gate.weights.data();
    let e10 = 10f64.exp();
    assert!((w[0] - e10 / (e10 + 1.0)).abs() < 1e-9);
    assert!((w[1] - 1.0 / (e10 + 1.0)).abs() < 1e-9);
    assert_eq!(w[2], 0.0);
    assert_eq!(w[3], 0.0);
}

#[test]
fn moe_layer_zero_experts_give_zero_output() {
    let init = ParamInit::new(29);
    let mut p = MoEParams::new(&init, "moe", 3, 6, 4, 2, 0.01);
    for e in &mut p.experts {
        e.w1 = mm_tensor::Param::new(e.w1.name.clone(), Tensor::zeros(&[3, 6]));
        e.b1 = mm_tensor::Param::new(e.b1.name.clone(), Tensor::zeros(&[6]));
        e.w2 = mm_tensor::Param::new(e.w2.name.clone(), Tensor::zeros(&[6, 3]));
        e.b2 = mm_tensor::Param::new(e.b2.name.clone(), Tensor::zeros(&[3]));
    }
    let x = Tensor::randn(&[2, 3, 3], 1.0, &mut rng(30));
    let mut tape = Tape::inference();
    let (y, _) = moe_layer(&mut tape, &p, &x, false, &mut rng(0)).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn balance_cost_zero_for_uniform_importance_and_hand_case() {
    // Zero-initialized gate, k = n: every row is uniform, importance is
    // uniform, cost is exactly zero.
    let init = ParamInit::new(31);
    let p = MoEParams::new(&init, "moe", 3, 6, 4, 4, 0.01);
    let x = Tensor::randn(&[2, 2, 3], 1.0, &mut rng(32));
    let mut tape = Tape::inference();
    let (_, cost) = moe_layer(&mut tape, &p, &x, false, &mut rng(0)).unwrap();
    assert_eq!(cost.item().unwrap(), 0.0);

    // Importance [3, 1]: mean 2, population std 1, CV^2 = 0.25.
    // Route 3 tokens to expert 0 and 1 token to expert 1 with k = 1.
    let mut p2 = MoEParams::new(&init, "moe2", 2, 4, 2, 1, 0.01);
    p2.w_gate = mm_tensor::Param::new(
        "moe2/gate",
        Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
    );
    let x2 = Tensor::new(
        &[1, 4, 2],
        vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0],
    )
    .unwrap();
    let mut tape2 = Tape::inference();
    let (_, cost2) = moe_layer(&mut tape2, &p2, &x2, false, &mut rng(0)).unwrap();
    assert!((cost2.item().unwrap() - 0.25 * 0.01).abs() < 1e-12);
}

#[test]
fn moe_layer_dense_mode_matches_brute_force_mixture() {
    // k = n, no noise: equals the dense mixture computed by looping over
    // every expert, within 1e-9 relative.
    let init = ParamInit::new(33);
    let (c, h, n_exp) = (4, 8, 3);
    let mut p = MoEParams::new(&init, "moe", c, h, n_exp, n_exp, 0.01);
    p.w_gate = mm_tensor::Param::new("moe/gate", Tensor::randn(&[c, n_exp], 1.0, &mut rng(34)));
    let x = Tensor::randn(&[2, 3, c], 1.0, &mut rng(35));
    let mut tape = Tape::inference();
    let (y, _) = moe_layer(&mut tape, &p, &x, false, &mut rng(0)).unwrap();

    let flat = tape.reshape(&x, &[6, c]).unwrap();
    let gate = moe_gate_flat(&mut tape, &p, &flat, false, &mut rng(0)).unwrap();
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
    assert!(max < 1e-9, "relative diff {max}");
}

#[test]
fn moe_layer_grad_check() {
    let init = ParamInit::new(36);
    let mut p = MoEParams::new(&init, "moe", 3, 4, 3, 2, 0.01);
    // Random gate so the top-k selection is well separated.
    p.w_gate = mm_tensor::Param::new("moe/gate", Tensor::randn(&[3, 3], 1.0, &mut rng(37)));
    let x = Tensor::randn(&[1, 4, 3], 1.0, &mut rng(38));
    let probe = Tensor::randn(&[1, 4, 3], 1.0, &mut rng(39));

    let mut tape = Tape::new();
    // Noise off (eval) so the loss is deterministic and smooth around the
    // current selection.
    let (y, cost) = moe_layer(&mut tape, &p, &x, false, &mut rng(0)).unwrap();
    let w = tape.mul(&y, &probe).unwrap();
    let s = tape.sum_all(&w).unwrap();
    let loss = tape.add(&s, &cost).unwrap();
    let grads = tape.backward(&loss).unwrap();

    let (max_rel, worst) = fd_check(
        &mut p,
        |p| {
            let mut v = Vec::new();
            p.visit_mut(&mut v);
            v
        },
        |p| {
            let mut t = Tape::inference();
            let (y, cost) = moe_layer(&mut t, p, &x, false, &mut rng(0)).unwrap();
            let w = t.mul(&y, &probe).unwrap();
            let s = t.sum_all(&w).unwrap();
            t.add(&s, &cost).unwrap().item().unwrap()
        },
        &grads,
        // The noise projection only matters in training mode; skip it.
        &["w1", "b1", "w2", "b2", "gate"],
        FD_STEP,
    );
    assert!(max_rel < 1e-3, "max rel {max_rel} at {worst}");
}
