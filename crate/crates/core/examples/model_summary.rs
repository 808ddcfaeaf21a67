//! Parameter and multiply-add counts of the default network and how the
//! group count and the graph branches change them.

use dstsa::network::{count_params_flops, ModelConfig};

pub fn run_example() -> dstsa::Result<()> {
    let base = ModelConfig::default();
    let (params, flops) = count_params_flops(&base)?;
    println!(
        "default: {} blocks, {params} parameters, {:.2} GFLOPs at T={}",
        base.block_plan().len(),
        flops as f64 / 1e9,
        base.input_frames
    );
    for groups in [1, 2, 4, 8, 16] {
        let (p, _) = count_params_flops(&ModelConfig { groups, ..base.clone() })?;
        println!("K = {groups:>2}: {p} parameters ({:+})", p as i64 - params as i64);
    }
    for (name, cfg) in [
        ("without GC-GC", ModelConfig { gcgc: false, ..base.clone() }),
        ("without GT-GC", ModelConfig { gtgc: false, ..base.clone() }),
        ("without STCA", ModelConfig { stca: false, ..base.clone() }),
    ] {
        let (p, f) = count_params_flops(&cfg)?;
        println!("{name:<14} {p} parameters, {:.2} GFLOPs", f as f64 / 1e9);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
