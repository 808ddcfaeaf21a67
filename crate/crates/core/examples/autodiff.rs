//! Reverse-mode gradients of a small expression, compared with central
//! finite differences.

use dstsa::autodiff::Tape;
use dstsa::tensor::Tensor;
use dstsa::verify::gradcheck::{gradcheck, GradCheckOptions};

pub fn run_example() -> dstsa::Result<()> {
    let x = Tensor::from_f64(&[2, 3], &[0.1, -0.4, 0.7, 1.2, -0.9, 0.3])?;
    let w = Tensor::from_f64(&[3, 2], &[0.5, -1.0, 0.25, 0.8, -0.6, 0.1])?;

    // loss = sum(tanh(x w))
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let h = tape.matmul(xv, wv)?;
    let y = tape.tanh(h);
    let loss = tape.sum(y, &[0, 1], false)?;
    tape.backward(loss)?;
    println!("loss      {:.6}", tape.value(loss).item());
    println!("dloss/dw  {:?}", tape.grad(wv).expect("leaf has a gradient").data());

    let report = gradcheck(
        &[x, w],
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            Ok(t.tanh(h))
        },
        &GradCheckOptions::default(),
    )?;
    println!(
        "finite differences: {} entries, max relative error {:.2e}",
        report.checked, report.max_rel_err
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
