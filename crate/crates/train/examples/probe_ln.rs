//! Scratch: isolate the selftest conv-block FD disagreement.
use mm_model::{conv_block, ConvBlockParams, ParamGroup, ParamInit};
use mm_tensor::{PadMode, RngStream, Tape, Tensor};

fn main() {
    let init = ParamInit::new(3);
    let mut blk = ConvBlockParams::new(&init, "cb", 3, 0.4);
    let x = Tensor::randn(&[1, 5, 3], 1.0, &mut RngStream::new(4));
    let probe = Tensor::randn(&[1, 5, 3], 1.0, &mut RngStream::new(5));

    let loss_of = |blk: &ConvBlockParams| -> f64 {
        let mut t = Tape::inference();
        let y = conv_block(&mut t, blk, &x, PadMode::Left, false, &mut RngStream::new(0)).unwrap();
        let w = t.mul(&y, &probe).unwrap();
        t.sum_all(&w).unwrap().item().unwrap()
    };

    // analytic
    let mut tape = Tape::new();
    let y = conv_block(&mut tape, &blk, &x, PadMode::Left, false, &mut RngStream::new(0)).unwrap();
    let w = tape.mul(&y, &probe).unwrap();
    let loss = tape.sum_all(&w).unwrap();
    let grads = tape.backward(&loss).unwrap();
    println!("analytic cb/s2/b = {:?}", grads.get("cb/s2/b").map(|t| t.data().to_vec()));

    let base = loss_of(&blk);
    for delta in [1e-7, 1e-6, 1e-5, 1e-4, 1e-3] {
        fn poke(blk: &mut ConvBlockParams, val: f64) {
            let mut v = Vec::new();
            blk.visit_mut(&mut v);
            let p = v.into_iter().find(|p| p.name == "cb/s2/b").unwrap();
            p.value = p.value.with_value_at(0, val).unwrap();
        }
        poke(&mut blk, delta);
        let up = loss_of(&blk);
        poke(&mut blk, -delta);
        let down = loss_of(&blk);
        poke(&mut blk, 0.0);
        println!("delta {delta:.0e}: up-base {:+.3e} down-base {:+.3e} fd {:+.3e}", up - base, down - base, (up - down) / (2.0 * delta));
    }
}
