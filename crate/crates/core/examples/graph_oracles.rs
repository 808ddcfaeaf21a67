//! The graph layer against plain-loop references: the reduced layer against
//! a direct spatial graph convolution, grouped layers against per-group
//! slices, and permutation equivariance of the dynamic graphs.

use dstsa::verify::oracles::{equivariance_oracle, grouping_oracle, pooling_oracle, reduction_oracle};

pub fn run_example() -> dstsa::Result<()> {
    println!("reduction to a spatial GCN, 20 instances: {:.2e}", reduction_oracle(20)?);
    println!("grouped vs per-group slices, K = 2, 4, 8: {:.2e}", grouping_oracle(&[2, 4, 8], 2)?);
    let (joint, frame) = equivariance_oracle(4)?;
    println!("joint permutations {joint:.2e}, frame permutations {frame:.2e}");
    let p = pooling_oracle(10)?;
    println!(
        "pooling: weight sums off by {:.2e}, range violation {:.2e}, reference {:.2e}",
        p.weight_sum_err, p.range_violation, p.reference_err
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
