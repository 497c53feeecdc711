//! Property tests over random shapes and values.

use mm_tensor::{PadMode, RngStream, Tape, Tensor};
use proptest::prelude::*;

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..8, seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let x = Tensor::randn(&[rows, cols], 5.0, &mut rng);
        let mut tape = Tape::inference();
        let y = tape.softmax(&x).unwrap();
        for row in y.data().chunks_exact(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn left_conv_never_sees_the_future(
        l in 2usize..10,
        c in 1usize..4,
        pos in 0usize..9,
        seed in 0u64..1000,
    ) {
        let pos = pos.min(l - 1);
        let mut rng = RngStream::new(seed);
        let x = Tensor::randn(&[1, l, c], 1.0, &mut rng);
        let dw = Tensor::randn(&[3, 1, c], 1.0, &mut rng);
        let pw = Tensor::randn(&[c, c], 1.0, &mut rng);
        let mut tape = Tape::inference();
        let y = tape.sep_conv1d(&x, &dw, &pw, 1, 1, PadMode::Left).unwrap();
        let xp = x.with_value_at(pos * c, 1234.5).unwrap();
        let yp = tape.sep_conv1d(&xp, &dw, &pw, 1, 1, PadMode::Left).unwrap();
        for t_out in 0..pos {
            for ch in 0..c {
                prop_assert_eq!(
                    y.data()[t_out * c + ch].to_bits(),
                    yp.data()[t_out * c + ch].to_bits()
                );
            }
        }
    }

    #[test]
    fn reshape_then_permute_roundtrip(data in finite_vec(24)) {
        let x = Tensor::new(&[2, 3, 4], data).unwrap();
        let mut tape = Tape::inference();
        let p = tape.permute(&x, &[2, 0, 1]).unwrap();
        let back = tape.permute(&p, &[1, 2, 0]).unwrap();
        prop_assert!(back.bit_eq(&x));
    }

    #[test]
    fn dropout_eval_identity(data in finite_vec(12), rate in 0.0f64..0.95) {
        let x = Tensor::new(&[3, 4], data).unwrap();
        let mut rng = RngStream::new(0);
        let mut tape = Tape::inference();
        let y = tape.dropout(&x, rate, false, &mut rng).unwrap();
        prop_assert!(y.bit_eq(&x));
    }

    #[test]
    fn scatter_gather_identity_on_distinct_rows(seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut tape = Tape::inference();
        // out[rows[m]] = x[m], so gathering back with the same list
        // recovers x: x[m] = out[rows[m]].
        let s = tape.scatter_rows(&x, &[2, 0, 1], 3).unwrap();
        let g = tape.gather_rows(&s, &[2, 0, 1]).unwrap();
        prop_assert!(g.bit_eq(&x));
    }
}
