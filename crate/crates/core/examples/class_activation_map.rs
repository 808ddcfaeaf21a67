//! Class activation map of a trained model: which frames and joints drive
//! the predicted class.

use dstsa::autodiff::Tape;
use dstsa::network::{cam, ModelConfig};
use dstsa::nn::Ctx;
use dstsa::skeleton::{generate_synthetic, stack_batch, SampleMode};
use dstsa::training::{argmax, prepare_input, TrainConfig, Trainer};

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
    let mut t = Trainer::new(&model, cfg, train.clone(), Vec::new())?;
    while !t.is_finished() {
        t.train_epoch()?;
    }

    // one training sample of class 1 in eval mode
    let seq = &train[16];
    let input = prepare_input(seq, t.cfg.modality, t.graph(), 30, SampleMode::Uniform, 0)?;
    let mut tape = Tape::new();
    let mut stats = t.stats.clone();
    let x = tape.constant(stack_batch::<f32>(&[&input])?);
    let mut ctx = Ctx::new(&mut tape, &t.params, &mut stats, false);
    let out = t.model.forward(&mut ctx, x)?;
    let predicted = argmax(&tape.value(out.logits).to_f64_vec());
    let features = tape.value(out.features);
    let features = features.reshape(&features.shape()[1..])?;
    let map = cam(&features, &t.params.get(t.model.head.weight).value, predicted)?;
    let (frames, joints) = (map.shape()[0], map.shape()[1]);
    println!("label {}, predicted {predicted}, map {frames} frames x {joints} joints", seq.label14);
    let mut joint_mass: Vec<(usize, f64)> = (0..joints).map(|j| (j, (0..frames).map(|f| map.at(&[f, j])).sum())).collect();
    joint_mass.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most active joints: {:?}", joint_mass.iter().take(5).map(|(j, _)| j).collect::<Vec<_>>());
    Ok(())
}

pub fn run_example() -> dstsa::Result<()> {
    run(20)
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
