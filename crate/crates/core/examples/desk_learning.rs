//! The default network on the 4-class synthetic set (64 train, 32 val,
//! V = 22, T = 30), trained until it reaches 95% train and 80% validation
//! accuracy or runs out of epochs. About 8 s per epoch on one core.

use std::time::Instant;

use dstsa::config::RunConfig;
use dstsa::network::ModelConfig;
use dstsa::training::{TrainConfig, Trainer};

pub fn run(epochs: usize) -> dstsa::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.apply_pairs(&[("data.source".into(), "synthetic".into())])?;
    let (train, val) = cfg.load_data()?;
    let model = ModelConfig {
        num_classes: 4,
        input_frames: 30,
        ..ModelConfig::default()
    };
    let schedule = TrainConfig {
        lr0: 0.05,
        warmup: 5,
        milestones: vec![150, 180],
        epochs,
        batch_size: 16,
        frames: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&model, schedule, train, val)?;
    println!("{} parameters", t.model.param_count());
    let start = Instant::now();
    while !t.is_finished() {
        let s = t.train_epoch()?;
        let val = s.val_acc.unwrap_or(0.0);
        println!(
            "epoch {:>3}  lr {:.4}  loss {:.3}  train {:.3}  val {val:.3}  {:.0}s",
            s.epoch,
            s.lr,
            s.train_loss,
            s.train_acc,
            start.elapsed().as_secs_f64()
        );
        if s.train_acc >= 0.95 && val >= 0.8 {
            println!("targets reached");
            break;
        }
    }
    Ok(())
}

pub fn run_example() -> dstsa::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    run(epochs)
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
