//! Temporal and channel gated pooling weights, and the STCA gates that
//! rescale a feature map per frame and per joint.

use dstsa::autodiff::Tape;
use dstsa::nn::{Builder, Ctx};
use dstsa::params::{ParamStore, RunningStats};
use dstsa::pooling::{cgp_weights, tgp, tgp_weights, Stca};
use dstsa::verify::oracles::random_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> dstsa::Result<()> {
    let (n, c, t, v) = (1, 8, 6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&[n, c, t, v], 2.0, &mut rng);

    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x);
    let tw = tgp_weights(&mut tape, xv)?;
    let cw = cgp_weights(&mut tape, xv)?;
    let pooled = tgp(&mut tape, xv)?;
    let frame_weights = &tape.value(tw).data()[..t];
    println!("TGP weights of channel 0, joint 0: {frame_weights:.3?} (sum {:.6})", frame_weights.iter().sum::<f64>());
    let channel_weights = &tape.value(cw).data()[..c];
    println!("CGP weights at frame 0, joint 0:   {channel_weights:.3?}");
    println!("TGP output shape {:?}", tape.shape(pooled));

    let mut params = ParamStore::new();
    let mut stats = RunningStats::new();
    let stca = Stca::new(
        &mut Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        },
        "stca",
        c,
        4,
    )?;
    let mut ctx = Ctx::new(&mut tape, &params, &mut stats, false);
    let (gt, gv) = stca.gates(&mut ctx, xv)?;
    println!(
        "STCA: {} hidden units, temporal gate {:?}, joint gate {:?}",
        stca.hidden,
        ctx.tape.shape(gt),
        ctx.tape.shape(gv)
    );
    println!("joint gate of channel 0: {:.3?}", &ctx.tape.value(gv).data()[..v]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
