//! Optimizer, learning-rate schedule, metrics, score fusion and the training loop.

mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use metrics::{argmax, fuse_scores, softmax_rows, Confusion};
pub use optim::Sgd;
pub use schedule::{lr_at, TrainConfig};
pub use trainer::{derive_seed, evaluate, prepare_input, EpochStats, Evaluation, Trainer, LOG_HEADER};
