//! Static graph initializations, and the per-channel (GC-GC) and per-frame
//! (GT-GC) graphs a layer builds from its input.

use dstsa::autodiff::Tape;
use dstsa::graph_conv::{GraphConv, GraphConvConfig};
use dstsa::nn::{Builder, Ctx};
use dstsa::params::{ParamStore, RunningStats};
use dstsa::skeleton::GraphSpec;
use dstsa::topology::{init_static, normalize_adjacency, StaticInit, Theta, NORM_EPS};
use dstsa::verify::oracles::random_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> dstsa::Result<()> {
    let graph = GraphSpec::hand22();
    for init in [StaticInit::Random, StaticInit::Distance, StaticInit::Spatial1, StaticInit::Spatial2] {
        let bank = init_static(init, &graph, 3, 0)?;
        let first = bank.narrow(0, 0, 1)?.reshape(&[22, 22])?;
        let norm = normalize_adjacency(&first.map(f64::abs), NORM_EPS)?;
        println!(
            "{init:<9} bank {:?}, wrist row {:.2?}..., normalized mass {:.2}",
            bank.shape(),
            &first.data()[..4],
            norm.sum()
        );
    }

    let cfg = GraphConvConfig {
        cin: 8,
        cout: 16,
        groups: 4,
        theta: Theta::Tanh,
        static_init: StaticInit::Random,
        stca: true,
        gcgc: true,
        gtgc: true,
    };
    let mut params = ParamStore::<f64>::new();
    let mut stats = RunningStats::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = GraphConv::new(
        &mut Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        },
        "layer",
        &cfg,
        &graph,
    )?;
    let x = random_tensor(&[2, 8, 10, 22], 1.0, &mut rng);
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &params, &mut stats, false);
    let xv = ctx.tape.leaf(x);
    let a_c = layer.gcgc.as_ref().expect("enabled").topology(&mut ctx, xv)?;
    let a_t = layer.gtgc.as_ref().expect("enabled").topology(&mut ctx, xv)?;
    let y = layer.forward(&mut ctx, xv)?;
    println!("channel graphs {:?}  (N, C_out, V, V)", ctx.tape.shape(a_c));
    println!("frame graphs   {:?}  (N, K, T, V, V)", ctx.tape.shape(a_t));
    println!("layer output   {:?}, {} parameters", ctx.tape.shape(y), layer.param_count());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
