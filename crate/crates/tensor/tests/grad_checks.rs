//! Backward pass against central finite differences, per operation,
//! over multiple random seeds.

use mm_tensor::{grad_check, PadMode, Param, RngStream, Tape, Tensor, TensorError};

const STEP: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [11, 22, 33, 44, 55];

/// Fixed probe so losses are generic linear functionals of the op output.
fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed ^ 0xABCD);
    Tensor::randn(shape, 1.0, &mut rng)
}

fn check<F>(params: &mut [Param], f: F)
where
    F: Fn(&mut Tape, &[Param]) -> mm_tensor::Result<Tensor>,
{
    let report = grad_check(params, f, RTOL, STEP).unwrap();
    assert!(report.pass, "{}", report.summary());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut rng = RngStream::new(1);
    let p = Param::new("x", Tensor::randn(&[3, 4], 1.0, &mut rng));
    let mut tape = Tape::new();
    let x = tape.param(&p).unwrap();
    let loss = tape.sum_all(&x).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.get("x").unwrap().data().iter().all(|v| *v == 1.0));
}

#[test]
fn backward_of_relu_gates() {
    let p = Param::new("x", Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param(&p).unwrap();
    let r = tape.relu(&x).unwrap();
    let loss = tape.sum_all(&r).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get("x").unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let p = Param::new("x", Tensor::ones(&[3]));
    let mut tape = Tape::new();
    let x = tape.param(&p).unwrap();
    let y = tape.relu(&x).unwrap();
    assert!(matches!(
        tape.backward(&y),
        Err(TensorError::NonScalarLoss { numel: 3 })
    ));
}

#[test]
fn off_path_leaves_get_zero_gradients() {
    let a = Param::new("used", Tensor::ones(&[2]));
    let b = Param::new("unused", Tensor::ones(&[3]));
    let mut tape = Tape::new();
    let xa = tape.param(&a).unwrap();
    tape.param(&b).unwrap();
    let loss = tape.sum_all(&xa).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.get("unused").unwrap().data().iter().all(|v| *v == 0.0));
    assert_eq!(grads.get("unused").unwrap().shape(), &[3]);
}

#[test]
fn grad_elementwise_family() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("a", Tensor::randn(&[3, 4], 1.0, &mut rng)),
            Param::new("b", Tensor::randn(&[3, 4], 1.0, &mut rng)),
        ];
        let c = probe(&[3, 4], seed);
        check(&mut params, move |t, ps| {
            let a = t.param(&ps[0])?;
            let b = t.param(&ps[1])?;
            let sum = t.add(&a, &b)?;
            let prod = t.mul(&sum, &b)?;
            let r = t.relu(&prod)?;
            let sp = t.softplus(&r)?;
            let weighted = t.mul(&sp, &c)?;
            t.sum_all(&weighted)
        });
    }
}

#[test]
fn grad_div_and_scalar_broadcast() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        // Keep divisors away from zero.
        let mut denom = Tensor::randn(&[4], 0.5, &mut rng).data().to_vec();
        for v in denom.iter_mut() {
            *v = 2.0 + v.abs();
        }
        let mut params = vec![
            Param::new("a", Tensor::randn(&[4], 1.0, &mut rng)),
            Param::new("b", Tensor::new(&[4], denom).unwrap()),
            Param::new("s", Tensor::scalar(1.5).unwrap()),
        ];
        check(&mut params, |t, ps| {
            let a = t.param(&ps[0])?;
            let b = t.param(&ps[1])?;
            let s = t.param(&ps[2])?;
            let q = t.div(&a, &b)?;
            let shifted = t.add(&q, &s)?;
            let scaled = t.mul(&shifted, &s)?;
            t.sum_all(&scaled)
        });
    }
}

#[test]
fn grad_matmul_batched() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("a", Tensor::randn(&[2, 3, 4], 1.0, &mut rng)),
            Param::new("b", Tensor::randn(&[2, 4, 2], 1.0, &mut rng)),
        ];
        let c = probe(&[2, 3, 2], seed);
        check(&mut params, move |t, ps| {
            let a = t.param(&ps[0])?;
            let b = t.param(&ps[1])?;
            let y = t.matmul(&a, &b)?;
            let w = t.mul(&y, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_softmax_and_log_softmax() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![Param::new("x", Tensor::randn(&[3, 5], 1.0, &mut rng))];
        let c = probe(&[3, 5], seed);
        let c2 = probe(&[3, 5], seed ^ 1);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let s = t.softmax(&x)?;
            let l = t.log_softmax(&x)?;
            let ws = t.mul(&s, &c)?;
            let wl = t.mul(&l, &c2)?;
            let total = t.add(&ws, &wl)?;
            t.sum_all(&total)
        });
    }
}

#[test]
fn grad_masked_softmax() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![Param::new("x", Tensor::randn(&[4, 6], 1.0, &mut rng))];
        // Fixed mask with 3 active slots per row.
        let mut m = vec![0.0; 24];
        for r in 0..4 {
            for j in 0..3 {
                m[r * 6 + (r + j) % 6] = 1.0;
            }
        }
        let mask = Tensor::new(&[4, 6], m).unwrap();
        let c = probe(&[4, 6], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let y = t.masked_softmax(&x, &mask)?;
            let w = t.mul(&y, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_layer_norm() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[3, 4], 1.0, &mut rng)),
            Param::new("g", Tensor::randn(&[4], 0.5, &mut rng)),
            Param::new("b", Tensor::randn(&[4], 0.5, &mut rng)),
        ];
        let c = probe(&[3, 4], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let g = t.param(&ps[1])?;
            let b = t.param(&ps[2])?;
            let y = t.layer_norm(&x, &g, &b, 1e-6)?;
            let w = t.mul(&y, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_sep_conv() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[2, 6, 3], 1.0, &mut rng)),
            Param::new("dw", Tensor::randn(&[3, 1, 3], 1.0, &mut rng)),
            Param::new("pw", Tensor::randn(&[3, 4], 1.0, &mut rng)),
        ];
        for pad in [PadMode::Same, PadMode::Left] {
            let c = probe(&[2, 6, 4], seed);
            check(&mut params, move |t, ps| {
                let x = t.param(&ps[0])?;
                let dw = t.param(&ps[1])?;
                let pw = t.param(&ps[2])?;
                let y = t.sep_conv1d(&x, &dw, &pw, 1, 1, pad)?;
                let w = t.mul(&y, &c)?;
                t.sum_all(&w)
            });
        }
    }
}

#[test]
fn grad_sep_conv_strided_dilated_2d() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[1, 7, 5, 2], 1.0, &mut rng)),
            Param::new("dw", Tensor::randn(&[3, 3, 2], 1.0, &mut rng)),
            Param::new("pw", Tensor::randn(&[2, 3], 1.0, &mut rng)),
        ];
        let c = probe(&[1, 4, 3, 3], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let dw = t.param(&ps[1])?;
            let pw = t.param(&ps[2])?;
            let y = t.sep_conv2d(&x, &dw, &pw, (2, 2), (1, 1), PadMode::Same)?;
            let w = t.mul(&y, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_pool_and_gap() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![Param::new("x", Tensor::randn(&[1, 6, 6, 2], 1.0, &mut rng))];
        let c = probe(&[1, 2], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let p = t.max_pool2d(&x, (3, 3), (2, 2))?;
            let g = t.global_avg_pool(&p)?;
            let w = t.mul(&g, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_embedding_and_unused_rows_zero() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![Param::new("table", Tensor::randn(&[5, 3], 1.0, &mut rng))];
        let ids = [1usize, 3, 1];
        let c = probe(&[1, 3, 3], seed);
        check(&mut params, move |t, ps| {
            let table = t.param(&ps[0])?;
            let e = t.embedding(&table, &ids, &[1, 3])?;
            let w = t.mul(&e, &c)?;
            t.sum_all(&w)
        });

        // Rows never looked up must have exactly zero gradient.
        let mut tape = Tape::new();
        let table = tape.param(&params[0]).unwrap();
        let e = tape.embedding(&table, &ids, &[1, 3]).unwrap();
        let loss = tape.sum_all(&e).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let gt = grads.get("table").unwrap();
        for unused in [0usize, 2, 4] {
            assert!(gt.data()[unused * 3..(unused + 1) * 3].iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn grad_shape_and_index_ops() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[4, 3], 1.0, &mut rng)),
            Param::new("s", Tensor::randn(&[2], 1.0, &mut rng)),
        ];
        let c = probe(&[12], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let s = t.param(&ps[1])?;
            let g = t.gather_rows(&x, &[2, 0])?;
            let scaled = t.scale_rows(&g, &s)?;
            let sc = t.scatter_rows(&scaled, &[1, 1], 3)?;
            let perm = t.permute(&sc, &[1, 0])?;
            let flat = t.reshape(&perm, &[9])?;
            let cells = t.gather_cells(&x, &[0, 1, 3], &[2, 0, 1])?;
            let cat = t.concat(&[&flat, &cells], 0)?;
            let w = t.mul(&cat, &c)?;
            t.sum_all(&w)
        });
    }
}

#[test]
fn grad_sum_axis0_and_reductions() {
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![Param::new("x", Tensor::randn(&[4, 3], 1.0, &mut rng))];
        let c = probe(&[3], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let cols = t.sum_axis0(&x)?;
            let w = t.mul(&cols, &c)?;
            let s = t.sum_all(&w)?;
            let m = t.mean_all(&x)?;
            t.add(&s, &m)
        });
    }
}

#[test]
fn grad_composite_block_matches_fd() {
    // A deeper composite: conv -> layer norm -> softmax -> weighted sum.
    for seed in SEEDS {
        let mut rng = RngStream::new(seed);
        let mut params = vec![
            Param::new("x", Tensor::randn(&[1, 5, 3], 1.0, &mut rng)),
            Param::new("dw", Tensor::randn(&[3, 1, 3], 1.0, &mut rng)),
            Param::new("pw", Tensor::randn(&[3, 3], 1.0, &mut rng)),
            Param::new("g", Tensor::randn(&[3], 0.3, &mut rng)),
            Param::new("b", Tensor::randn(&[3], 0.3, &mut rng)),
        ];
        let c = probe(&[1, 5, 3], seed);
        check(&mut params, move |t, ps| {
            let x = t.param(&ps[0])?;
            let dw = t.param(&ps[1])?;
            let pw = t.param(&ps[2])?;
            let g = t.param(&ps[3])?;
            let b = t.param(&ps[4])?;
            let r = t.relu(&x)?;
            let conv = t.sep_conv1d(&r, &dw, &pw, 1, 1, PadMode::Left)?;
            let norm = t.layer_norm(&conv, &g, &b, 1e-6)?;
            let sm = t.softmax(&norm)?;
            let w = t.mul(&sm, &c)?;
            t.sum_all(&w)
        });
    }
}
