//! Trainer behaviour on small synthetic problems.

use dstsa::network::{Checkpoint, Model, ModelConfig};
use dstsa::skeleton::generate_synthetic;
use dstsa::training::{evaluate, lr_at, TrainConfig, Trainer};

fn model_cfg() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        stage_depths: vec![1, 1, 1],
        num_classes: 3,
        joints: 22,
        input_frames: 12,
        ..ModelConfig::default()
    }
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        lr0: 0.05,
        warmup: 2,
        milestones: vec![8, 10],
        epochs: 12,
        batch_size: 6,
        frames: 12,
        seed,
        ..TrainConfig::default()
    }
}

fn trainer(seed: u64) -> Trainer {
    let train = generate_synthetic(3, 4, 22, 20, 11).unwrap();
    let val = generate_synthetic(3, 2, 22, 20, 12).unwrap();
    Trainer::new(&model_cfg(), train_cfg(seed), train, val).unwrap()
}

fn snapshot(t: &Trainer) -> Vec<Vec<f32>> {
    t.params.iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let mut t = trainer(1);
    let (x, labels) = t.epoch_batches(0).unwrap().remove(0);
    let losses: Vec<f64> = (0..6).map(|_| t.step(x.clone(), &labels, 0.02).unwrap().0).collect();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
}

#[test]
fn zero_learning_rate_leaves_weights_alone() {
    let mut t = trainer(1);
    let before = snapshot(&t);
    let (x, labels) = t.epoch_batches(0).unwrap().remove(0);
    for _ in 0..3 {
        t.step(x.clone(), &labels, 0.0).unwrap();
    }
    assert_eq!(snapshot(&t), before);
}

#[test]
fn training_is_reproducible_per_seed() {
    let (mut a, mut b, mut c) = (trainer(4), trainer(4), trainer(5));
    for _ in 0..2 {
        let (sa, sb, sc) = (a.train_epoch().unwrap(), b.train_epoch().unwrap(), c.train_epoch().unwrap());
        assert_eq!((sa.train_loss, sa.train_acc, sa.val_acc), (sb.train_loss, sb.train_acc, sb.val_acc));
        assert_ne!(sa.train_loss, sc.train_loss);
    }
}

#[test]
fn epochs_follow_the_schedule_and_visit_every_sample() {
    let mut t = trainer(2);
    let batches = t.epoch_batches(3).unwrap();
    let sizes: Vec<usize> = batches.iter().map(|(_, l)| l.len()).collect();
    assert_eq!(sizes, vec![6, 6]);
    let mut labels: Vec<usize> = batches.iter().flat_map(|(_, l)| l.clone()).collect();
    labels.sort_unstable();
    assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    for e in 0..3 {
        let s = t.train_epoch().unwrap();
        assert_eq!(s.epoch, e + 1);
        assert_eq!(s.lr, lr_at(e, &t.cfg));
        assert!(s.train_loss.is_finite());
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut t = trainer(3);
    t.train_epoch().unwrap();
    let bytes = t.checkpoint("k = v".into()).encode();
    let ckpt = Checkpoint::<f32>::decode(&bytes).unwrap();
    assert_eq!(ckpt.epoch, 1);
    let (model, mut params, mut stats) = Model::new::<f32>(&model_cfg(), 99).unwrap();
    ckpt.restore(&mut params, &mut stats).unwrap();
    let before = t.evaluate_val().unwrap().unwrap();
    let val = generate_synthetic(3, 2, 22, 20, 12).unwrap();
    let graph = t.graph().clone();
    let inputs: Vec<_> = val
        .iter()
        .map(|s| dstsa::training::prepare_input(s, t.cfg.modality, &graph, 12, dstsa::skeleton::SampleMode::Uniform, 0).unwrap())
        .collect();
    let labels: Vec<usize> = val.iter().map(|s| s.label14).collect();
    let after = evaluate(&model, &params, &stats, &inputs, &labels, 4).unwrap();
    assert_eq!(before.scores, after.scores);
    for row in &after.scores {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn resuming_reproduces_the_next_epoch() {
    let mut straight = trainer(6);
    let mut first = trainer(6);
    straight.train_epoch().unwrap();
    first.train_epoch().unwrap();
    let ckpt = Checkpoint::<f32>::decode(&first.checkpoint(String::new()).encode()).unwrap();
    let mut resumed = trainer(6);
    resumed.resume(&ckpt).unwrap();
    assert_eq!(resumed.epoch(), 1);
    let (a, b) = (straight.train_epoch().unwrap(), resumed.train_epoch().unwrap());
    assert_eq!((a.train_loss, a.val_acc), (b.train_loss, b.val_acc));
    assert_eq!(snapshot(&straight), snapshot(&resumed));
}

#[test]
fn inputs_with_the_wrong_joint_count_are_rejected() {
    let train = generate_synthetic(3, 2, 20, 20, 1).unwrap();
    assert!(Trainer::new(&model_cfg(), train_cfg(1), train, Vec::new()).is_err());
}
