//! Run the built-in self-checks (the same ones `dstsa verify` runs).
//! Pass a filter such as `oracle` to run a subset.

use dstsa::verify::suite;

pub fn run(filter: Option<&str>) -> dstsa::Result<()> {
    let results = suite::run(filter, |r| {
        println!("{} {:<26} {:>6.2}s {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
    });
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(dstsa::Error::Integrity(format!("{} failed", r.name))),
        None => Ok(()),
    }
}

pub fn run_example() -> dstsa::Result<()> {
    run(std::env::args().nth(1).as_deref())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
