//! Train one model per input modality and fuse their class scores with a
//! weighted sum. The motion modalities are left out: on the synthetic set the
//! per-frame jitter is about as large as the per-frame displacement, so frame
//! differences carry little signal there.

use dstsa::network::ModelConfig;
use dstsa::skeleton::{generate_synthetic, ModalityKind};
use dstsa::training::{fuse_scores, Confusion, TrainConfig, Trainer};

pub fn run(epochs: usize) -> dstsa::Result<()> {
    let model = ModelConfig {
        base_channels: 16,
        stage_depths: vec![1, 1, 1],
        num_classes: 4,
        input_frames: 30,
        ..ModelConfig::default()
    };
    let train = generate_synthetic(4, 16, 22, 30, 3)?;
    let val = generate_synthetic(4, 8, 22, 30, 4)?;
    let labels: Vec<usize> = val.iter().map(|s| s.label14).collect();
    let mut scores = Vec::new();
    for modality in [ModalityKind::Joint, ModalityKind::Bone] {
        let cfg = TrainConfig {
            lr0: 0.05,
            warmup: 2,
            milestones: vec![epochs + 1],
            epochs,
            batch_size: 16,
            frames: 30,
            modality,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&model, cfg, train.clone(), val.clone())?;
        while !t.is_finished() {
            t.train_epoch()?;
        }
        let e = t.evaluate_val()?.expect("validation split is present");
        println!("{:<12} accuracy {:.3}", modality.name(), e.accuracy);
        scores.push(e.scores);
    }
    for weights in [[1.0, 1.0], [2.0, 1.0]] {
        let (_, predicted) = fuse_scores(&scores, &weights)?;
        let fused = Confusion::from_predictions(4, &labels, &predicted);
        println!("fused {weights:?}: accuracy {:.3}", fused.accuracy());
    }
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
