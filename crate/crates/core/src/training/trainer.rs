use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{argmax, softmax_rows, Confusion};
use super::optim::Sgd;
use super::schedule::{lr_at, TrainConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::network::{Checkpoint, Model, ModelConfig};
use crate::nn::Ctx;
use crate::params::{ParamStore, RunningStats};
use crate::skeleton::{center_on_root, sample_frames, stack_batch, GraphSpec, ModalityKind, SampleMode, SkeletonSequence};
use crate::tensor::{Scalar, Tensor};

/// Column names of the per-epoch training log.
pub const LOG_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc\twall_seconds";

/// Stream of seeds for `(epoch, item)` derived from a run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, epoch: u64, item: u64) -> u64 {
    let mut z = seed
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(item.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Network input `(3, frames, V)` for one sequence: resample, center on the
/// first sampled root position, then derive the modality.
pub fn prepare_input(
    seq: &SkeletonSequence,
    modality: ModalityKind,
    graph: &GraphSpec,
    frames: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Tensor<f64>> {
    let mut clip = sample_frames(seq, frames, mode, seed);
    center_on_root(&mut clip, graph);
    modality.derive(&clip, graph)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub wall_seconds: f64,
}

impl EpochStats {
    pub fn to_tsv(&self) -> String {
        let val = self.val_acc.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, val, self.wall_seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
    /// Softmax scores per sample.
    pub scores: Vec<Vec<f64>>,
}

/// Top-1 accuracy and confusion of an eval-mode model on prepared inputs.
pub fn evaluate<F: Scalar>(
    model: &Model,
    params: &ParamStore<F>,
    stats: &RunningStats<F>,
    inputs: &[Tensor<f64>],
    labels: &[usize],
    batch_size: usize,
) -> Result<Evaluation> {
    if inputs.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Input(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let classes = model.cfg.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    // eval mode reads the running statistics without updating them
    let mut stats = stats.clone();
    let mut scores = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f64>> = chunk.iter().collect();
        let mut tape = Tape::new();
        let x = tape.constant(stack_batch::<F>(&refs)?);
        let mut ctx = Ctx::new(&mut tape, params, &mut stats, false);
        let out = model.forward(&mut ctx, x)?;
        scores.extend(softmax_rows(&tape.value(out.logits).to_f64_vec(), classes));
    }
    let predicted: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let confusion = Confusion::from_predictions(classes, labels, &predicted);
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        scores,
    })
}

/// Single-owner training loop over in-memory sequences, in `f32`.
pub struct Trainer {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub stats: RunningStats<f32>,
    pub cfg: TrainConfig,
    opt: Sgd<f32>,
    graph: GraphSpec,
    train: Vec<SkeletonSequence>,
    val_inputs: Vec<Tensor<f64>>,
    val_labels: Vec<usize>,
    epoch: usize,
    history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(
        model_cfg: &ModelConfig,
        cfg: TrainConfig,
        train: Vec<SkeletonSequence>,
        val: Vec<SkeletonSequence>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        for seq in train.iter().chain(&val) {
            if seq.joints() != model_cfg.joints {
                return Err(Error::Input(format!(
                    "sequence has {} joints, model expects {}",
                    seq.joints(),
                    model_cfg.joints
                )));
            }
            if seq.label(cfg.label28) >= model_cfg.num_classes {
                return Err(Error::Input(format!(
                    "label {} out of range for {} classes",
                    seq.label(cfg.label28),
                    model_cfg.num_classes
                )));
            }
        }
        crate::runtime::retain_freed_memory();
        let graph = GraphSpec::for_joints(model_cfg.joints)?;
        let (model, params, stats) = Model::new::<f32>(model_cfg, cfg.seed)?;
        let opt = Sgd::new(&params, cfg.momentum, cfg.weight_decay, cfg.nesterov);
        let val_inputs = val
            .iter()
            .map(|s| prepare_input(s, cfg.modality, &graph, cfg.frames, SampleMode::Uniform, 0))
            .collect::<Result<Vec<_>>>()?;
        let val_labels = val.iter().map(|s| s.label(cfg.label28)).collect();
        Ok(Self {
            model,
            params,
            stats,
            cfg,
            opt,
            graph,
            train,
            val_inputs,
            val_labels,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// One optimizer step on a batch; returns the mean loss and the number of correct predictions.
    pub fn step(&mut self, x: Tensor<f32>, labels: &[usize], lr: f64) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mut ctx = Ctx::new(&mut tape, &self.params, &mut self.stats, true);
        let out = self.model.forward(&mut ctx, xv)?;
        let loss = tape.cross_entropy(out.logits, labels)?;
        let loss_value = tape.value(loss).item().as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", self.epoch + 1)));
        }
        let logits = tape.value(out.logits).to_f64_vec();
        let k = self.model.cfg.num_classes;
        let correct = logits
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        tape.backward(loss)?;
        self.params.zero_grad();
        tape.write_param_grads(&mut self.params);
        self.opt.step(&mut self.params, lr)?;
        Ok((loss_value, correct))
    }

    /// Inputs and labels of the training batches for `epoch` (0-based), in visiting order.
    pub fn epoch_batches(&self, epoch: usize) -> Result<Vec<(Tensor<f32>, Vec<usize>)>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, u64::MAX)));
        order
            .chunks(self.cfg.batch_size)
            .map(|idx| {
                let inputs = idx
                    .iter()
                    .map(|&i| {
                        let seed = derive_seed(self.cfg.seed, epoch as u64, i as u64);
                        let seq = &self.train[i];
                        prepare_input(seq, self.cfg.modality, &self.graph, self.cfg.frames, SampleMode::Random, seed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
                let labels = idx.iter().map(|&i| self.train[i].label(self.cfg.label28)).collect();
                Ok((stack_batch::<f32>(&refs)?, labels))
            })
            .collect()
    }

    /// Run the next epoch, then score the validation split if there is one.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = lr_at(epoch, &self.cfg);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (x, labels) in self.epoch_batches(epoch)? {
            let (loss, ok) = self.step(x, &labels, lr)?;
            loss_sum += loss * labels.len() as f64;
            correct += ok;
        }
        let n = self.train.len() as f64;
        let val_acc = self.evaluate_val()?.map(|e| e.accuracy);
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    pub fn evaluate_val(&self) -> Result<Option<Evaluation>> {
        if self.val_inputs.is_empty() {
            return Ok(None);
        }
        evaluate(
            &self.model,
            &self.params,
            &self.stats,
            &self.val_inputs,
            &self.val_labels,
            self.cfg.batch_size,
        )
        .map(Some)
    }

    /// Everything needed to continue training: weights, statistics, velocity and epoch.
    pub fn checkpoint(&self, config_text: String) -> Checkpoint<f32> {
        Checkpoint::capture(
            config_text,
            self.epoch as u64,
            &self.params,
            &self.stats,
            Some(self.opt.velocity()),
        )
    }

    pub fn resume(&mut self, ckpt: &Checkpoint<f32>) -> Result<()> {
        ckpt.restore(&mut self.params, &mut self.stats)?;
        match ckpt.velocity(&self.params)? {
            Some(v) => self.opt.set_velocity(v)?,
            None => return Err(Error::Integrity("checkpoint has no optimizer state to resume from".into())),
        }
        self.epoch = ckpt.epoch as usize;
        Ok(())
    }
}
