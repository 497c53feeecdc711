//! Forward semantics of the elementwise, normalization, lookup and shape
//! operations, pinned against hand-computed values.

use mm_tensor::{Param, RngStream, Tape, Tensor, TensorError};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn softmax_uniform_logits() {
    let mut tape = Tape::inference();
    let y = tape.softmax(&t(&[2], &[0.0, 0.0])).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = RngStream::new(5);
    let x = Tensor::randn(&[4, 7], 3.0, &mut rng);
    let mut tape = Tape::inference();
    let y = tape.softmax(&x).unwrap();
    for row in y.data().chunks_exact(7) {
        let s: f64 = row.iter().sum();
        assert!(close(s, 1.0, 1e-12), "row sum {s}");
        assert!(row.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn log_softmax_matches_log_of_softmax() {
    let mut rng = RngStream::new(6);
    let x = Tensor::randn(&[3, 5], 2.0, &mut rng);
    let mut tape = Tape::inference();
    let p = tape.softmax(&x).unwrap();
    let lp = tape.log_softmax(&x).unwrap();
    for (a, b) in p.data().iter().zip(lp.data().iter()) {
        assert!(close(a.ln(), *b, 1e-12));
    }
}

#[test]
fn masked_softmax_exact_zeros_and_top_entries() {
    // H = [10, 0, 0, 0], top-2 mask on entries {0, 1}.
    let x = t(&[1, 4], &[10.0, 0.0, 0.0, 0.0]);
    let mask = t(&[1, 4], &[1.0, 1.0, 0.0, 0.0]);
    let mut tape = Tape::inference();
    let y = tape.masked_softmax(&x, &mask).unwrap();
    let e10 = 10f64.exp();
    assert!(close(y.data()[0], e10 / (e10 + 1.0), 1e-12));
    assert!(close(y.data()[1], 1.0 / (e10 + 1.0), 1e-12));
    assert_eq!(y.data()[2], 0.0);
    assert_eq!(y.data()[3], 0.0);
    assert!(close(y.data().iter().sum::<f64>(), 1.0, 1e-12));
}

#[test]
fn layer_norm_constant_row_collapses_to_shift() {
    let x = t(&[1, 3], &[5.0, 5.0, 5.0]);
    let g = Tensor::ones(&[3]);
    let b = Tensor::zeros(&[3]);
    let mut tape = Tape::inference();
    let y = tape.layer_norm(&x, &g, &b, 1e-6).unwrap();
    for v in y.data() {
        assert!(close(*v, 0.0, 1e-9));
    }
}

#[test]
fn layer_norm_analytic_two_point_row() {
    // mean 2, population variance 1 -> normalized [-1, 1] as eps -> 0.
    let x = t(&[1, 2], &[1.0, 3.0]);
    let g = Tensor::ones(&[2]);
    let b = Tensor::zeros(&[2]);
    let mut tape = Tape::inference();
    let y = tape.layer_norm(&x, &g, &b, 1e-12).unwrap();
    assert!(close(y.data()[0], -1.0, 1e-6));
    assert!(close(y.data()[1], 1.0, 1e-6));
}

#[test]
fn layer_norm_zero_gain_passes_only_shift() {
    let x = t(&[1, 2], &[1.0, 3.0]);
    let g = Tensor::zeros(&[2]);
    let b = t(&[2], &[7.0, 7.0]);
    let mut tape = Tape::inference();
    let y = tape.layer_norm(&x, &g, &b, 1e-6).unwrap();
    assert_eq!(y.data(), &[7.0, 7.0]);
}

#[test]
fn dropout_eval_is_bit_identity() {
    let mut rng = RngStream::new(9);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let mut tape = Tape::inference();
    let y = tape.dropout(&x, 0.4, false, &mut rng).unwrap();
    assert!(y.bit_eq(&x));
}

#[test]
fn dropout_training_preserves_expectation() {
    // E[output] = input: the empirical mean over >= 10^4 mask draws must sit
    // within 3 sigma of the input value.
    let n = 16usize;
    let x = Tensor::full(&[n], 2.0);
    let rate = 0.4;
    let draws = 10_000usize;
    let mut rng = RngStream::new(123);
    let mut sum = 0.0;
    let mut tape = Tape::inference();
    for _ in 0..draws {
        let y = tape.dropout(&x, rate, true, &mut rng).unwrap();
        sum += y.data().iter().sum::<f64>();
    }
    let samples = (n * draws) as f64;
    let mean = sum / samples;
    // One surviving value is 2/keep w.p. keep, else 0; its std is
    // 2 * sqrt((1-keep)/keep).
    let keep = 1.0 - rate;
    let sigma_mean = 2.0 * ((1.0 - keep) / keep).sqrt() / samples.sqrt();
    assert!(
        (mean - 2.0).abs() < 3.0 * sigma_mean,
        "mean {mean} outside 3 sigma {sigma_mean}"
    );
}

#[test]
fn global_avg_pool_of_ones_is_ones() {
    let x = Tensor::ones(&[1, 2, 2, 3]);
    let mut tape = Tape::inference();
    let y = tape.global_avg_pool(&x).unwrap();
    assert_eq!(y.shape(), &[1, 3]);
    assert!(y.data().iter().all(|v| *v == 1.0));
}

#[test]
fn embedding_matches_one_hot_matmul() {
    let mut rng = RngStream::new(17);
    let table = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let ids = [3usize, 0, 5, 3];
    let mut tape = Tape::inference();
    let looked = tape.embedding(&table, &ids, &[2, 2]).unwrap();
    assert_eq!(looked.shape(), &[2, 2, 4]);

    // One-hot route.
    let mut onehot = vec![0.0; ids.len() * 6];
    for (r, &id) in ids.iter().enumerate() {
        onehot[r * 6 + id] = 1.0;
    }
    let oh = t(&[4, 6], &onehot);
    let byhand = tape.matmul(&oh, &table).unwrap();
    for (a, b) in looked.data().iter().zip(byhand.data().iter()) {
        assert!(close(*a, *b, 1e-12));
    }
}

#[test]
fn embedding_zero_row_lookup() {
    let mut table = vec![0.0; 3 * 2];
    table[4] = 1.5; // row 2
    let table = t(&[3, 2], &table);
    let mut tape = Tape::inference();
    let y = tape.embedding(&table, &[0], &[1, 1]).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0]);
}

#[test]
fn embedding_rejects_out_of_range_id() {
    let table = Tensor::zeros(&[3, 2]);
    let mut tape = Tape::inference();
    assert!(matches!(
        tape.embedding(&table, &[3], &[1, 1]),
        Err(TensorError::IndexOutOfRange { .. })
    ));
}

#[test]
fn matmul_hand_case_and_shape_errors() {
    let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
    let mut tape = Tape::inference();
    let y = tape.matmul(&a, &b).unwrap();
    assert_eq!(y.data(), &[58.0, 64.0, 139.0, 154.0]);

    let bad = t(&[2, 2], &[0.0; 4]);
    assert!(tape.matmul(&a, &bad).is_err());
}

#[test]
fn batched_matmul_equals_per_batch() {
    let mut rng = RngStream::new(21);
    let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[2, 4, 5], 1.0, &mut rng);
    let mut tape = Tape::inference();
    let y = tape.matmul(&a, &b).unwrap();
    assert_eq!(y.shape(), &[2, 3, 5]);
    for bt in 0..2 {
        let ab = t(&[3, 4], &a.data()[bt * 12..(bt + 1) * 12]);
        let bb = t(&[4, 5], &b.data()[bt * 20..(bt + 1) * 20]);
        let yb = tape.matmul(&ab, &bb).unwrap();
        for (i, v) in yb.data().iter().enumerate() {
            assert!(close(*v, y.data()[bt * 15 + i], 1e-12));
        }
    }
}

#[test]
fn permute_transposes() {
    let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut tape = Tape::inference();
    let y = tape.permute(&x, &[1, 0]).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
}

#[test]
fn concat_and_gather_scatter_round() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t(&[1, 2], &[5.0, 6.0]);
    let mut tape = Tape::inference();
    let y = tape.concat(&[&a, &b], 0).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let g = tape.gather_rows(&y, &[2, 0]).unwrap();
    assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);

    let s = tape.scatter_rows(&g, &[1, 1], 3).unwrap();
    assert_eq!(s.data(), &[0.0, 0.0, 6.0, 8.0, 0.0, 0.0]);

    let cells = tape.gather_cells(&y, &[0, 2], &[1, 0]).unwrap();
    assert_eq!(cells.data(), &[2.0, 5.0]);
}

#[test]
fn scale_rows_scales_each_row() {
    let x = t(&[2, 3], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    let s = t(&[2], &[0.5, 10.0]);
    let mut tape = Tape::inference();
    let y = tape.scale_rows(&x, &s).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5, 0.5, 20.0, 20.0, 20.0]);
}

#[test]
fn add_broadcast_suffix_and_scalar() {
    let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let suffix = t(&[2], &[10.0, 20.0]);
    let scalar = Tensor::scalar(1.0).unwrap();
    let mut tape = Tape::inference();
    assert_eq!(
        tape.add(&x, &suffix).unwrap().data(),
        &[11.0, 22.0, 13.0, 24.0]
    );
    assert_eq!(tape.add(&x, &scalar).unwrap().data(), &[2.0, 3.0, 4.0, 5.0]);
    let bad = t(&[3], &[0.0; 3]);
    assert!(tape.add(&x, &bad).is_err());
}

#[test]
fn div_rejects_zero_divisor() {
    let a = Tensor::scalar(1.0).unwrap();
    let b = Tensor::scalar(0.0).unwrap();
    let mut tape = Tape::inference();
    assert!(tape.div(&a, &b).is_err());
}

#[test]
fn fixed_seed_graph_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = RngStream::new(77);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let w = Param::new("w", Tensor::randn(&[8, 8], 0.3, &mut rng));
        let mut tape = Tape::new();
        let xw = tape.param(&w).unwrap();
        let h = tape.matmul(&x, &xw).unwrap();
        let h = tape.relu(&h).unwrap();
        let h = tape.dropout(&h, 0.4, true, &mut rng).unwrap();
        let y = tape.sum_all(&h).unwrap();
        let grads = tape.backward(&y).unwrap();
        (y.data().to_vec(), grads.get("w").unwrap().data().to_vec())
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert_eq!(
        y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        y2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
