//! Multi-scale temporal convolution: channel split across branches and the
//! frame count after a strided block.

use dstsa::autodiff::Tape;
use dstsa::mstcn::{BranchSet, MsTcn};
use dstsa::nn::{Builder, Ctx};
use dstsa::params::{ParamStore, RunningStats};
use dstsa::verify::oracles::random_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> dstsa::Result<()> {
    for spec in ["M,S,g1,g2,g3,g4", "g1,g2", "S,g1,g2,g3,g4,g5"] {
        let branches: BranchSet = spec.parse()?;
        println!("{spec:<18} widths for 64 channels: {:?}", branches.widths(64)?);
    }

    let mut params = ParamStore::<f64>::new();
    let mut stats = RunningStats::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut b = Builder {
        params: &mut params,
        stats: &mut stats,
        rng: &mut rng,
    };
    let tcn = MsTcn::new(&mut b, "tcn", &BranchSet::default_set(), 16, 32, 2)?;
    let x = random_tensor(&[1, 16, 15, 22], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &params, &mut stats, true);
    let xv = ctx.tape.leaf(x);
    let y = tcn.forward(&mut ctx, xv)?;
    println!(
        "stride 2: {:?} -> {:?} (expected {} frames), {} parameters",
        [1, 16, 15, 22],
        ctx.tape.shape(y),
        tcn.output_frames(15)?,
        tcn.param_count()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
