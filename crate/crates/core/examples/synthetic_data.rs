//! Generate the synthetic gesture set, write it to a container file, read it
//! back and derive the four input modalities.

use dstsa::skeleton::synthetic::{class_motion, load_container, save_container};
use dstsa::skeleton::{generate_synthetic, sample_indices, GraphSpec, ModalityKind, SampleMode};

pub fn run_example() -> dstsa::Result<()> {
    let (classes, per_class, joints, frames) = (4, 16, 22, 30);
    let seqs = generate_synthetic(classes, per_class, joints, frames, 7)?;
    for class in 0..classes {
        let m = class_motion(class, joints);
        println!("class {class}: finger group {}, axis {}, {} cycle(s)", m.group, m.axis, m.cycles);
    }

    let path = std::env::temp_dir().join(format!("dstsa_synthetic_{}.bin", std::process::id()));
    save_container(&path, &seqs)?;
    let back = load_container(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let _ = std::fs::remove_file(&path);
    println!("{} sequences, {bytes} bytes, identical after reload: {}", back.len(), back == seqs);

    let graph = GraphSpec::hand22();
    for kind in ModalityKind::ALL {
        let x = kind.derive(&seqs[0], &graph)?;
        let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / x.numel() as f64).sqrt();
        println!("{:<12} shape {:?} rms {rms:.4}", kind.name(), x.shape());
    }

    println!("uniform 8 of 30: {:?}", sample_indices(30, 8, SampleMode::Uniform, 0));
    println!("random  8 of 30: {:?}", sample_indices(30, 8, SampleMode::Random, 1));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
