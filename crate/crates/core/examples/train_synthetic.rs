//! Train a small network on synthetic gestures, checkpoint it, and resume
//! from the checkpoint.

use dstsa::network::{Checkpoint, ModelConfig};
use dstsa::skeleton::generate_synthetic;
use dstsa::training::{TrainConfig, Trainer};

pub fn run(epochs: usize) -> dstsa::Result<()> {
    let model = ModelConfig {
        base_channels: 16,
        stage_depths: vec![1, 1, 1],
        num_classes: 4,
        input_frames: 30,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        lr0: 0.05,
        warmup: 2,
        milestones: vec![epochs + 1],
        epochs,
        batch_size: 16,
        frames: 30,
        ..TrainConfig::default()
    };
    let train = generate_synthetic(4, 16, 22, 30, 7)?;
    let val = generate_synthetic(4, 8, 22, 30, 8)?;
    let mut trainer = Trainer::new(&model, cfg.clone(), train.clone(), val.clone())?;
    let half = epochs / 2;
    while trainer.epoch() < half {
        let s = trainer.train_epoch()?;
        println!("epoch {:>3} loss {:.3} train {:.3} val {:.3}", s.epoch, s.train_loss, s.train_acc, s.val_acc.unwrap_or(0.0));
    }

    let path = std::env::temp_dir().join(format!("dstsa_example_{}.ckpt", std::process::id()));
    trainer.checkpoint("note = example".into()).save(&path)?;
    let ckpt = Checkpoint::<f32>::load(&path);
    let _ = std::fs::remove_file(&path);
    let mut resumed = Trainer::new(&model, cfg, train, val)?;
    resumed.resume(&ckpt?)?;
    println!("resumed at epoch {}", resumed.epoch());
    while !resumed.is_finished() {
        let s = resumed.train_epoch()?;
        println!("epoch {:>3} loss {:.3} train {:.3} val {:.3}", s.epoch, s.train_loss, s.train_acc, s.val_acc.unwrap_or(0.0));
    }
    Ok(())
}

pub fn run_example() -> dstsa::Result<()> {
    run(30)
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
