use crate::error::{Error, Result};
use crate::skeleton::ModalityKind;

/// Optimizer and schedule settings. Defaults follow the SHREC'17 recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
    /// Epochs at which the rate is divided by `lr_divisor`.
    pub milestones: Vec<usize>,
    pub lr_divisor: f64,
    pub epochs: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub modality: ModalityKind,
    /// Frames every sample is resampled to.
    pub frames: usize,
    /// Train against the 28-class labels instead of the 14-class ones.
    pub label28: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            weight_decay: 4e-4,
            momentum: 0.9,
            nesterov: true,
            milestones: vec![70, 100],
            lr_divisor: 10.0,
            epochs: 170,
            warmup: 20,
            batch_size: 64,
            seed: 1,
            modality: ModalityKind::Joint,
            frames: 150,
            label28: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0) || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "lr0 must be positive, weight_decay non-negative and momentum in [0, 1) (got {}, {}, {})",
                self.lr0, self.weight_decay, self.momentum
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.frames == 0 || !(self.lr_divisor > 0.0) {
            return bad("epochs, batch_size, frames and lr_divisor must be positive".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones must increase, got {:?}", self.milestones));
        }
        if let Some(&first) = self.milestones.first() {
            if self.warmup >= first {
                return bad(format!("warmup ({}) must end before the first milestone ({first})", self.warmup));
            }
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: linear warmup, then step drops.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.warmup {
        return cfg.lr0 * (epoch + 1) as f64 / cfg.warmup as f64;
    }
    let drops = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    // repeated division keeps 0.1 -> 0.01 -> 0.001 exact in binary
    (0..drops).fold(cfg.lr0, |lr, _| lr / cfg.lr_divisor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.005);
        assert_eq!(lr_at(19, &cfg), 0.1);
        assert_eq!(lr_at(69, &cfg), 0.1);
        assert_eq!(lr_at(75, &cfg), 0.01);
        assert_eq!(lr_at(105, &cfg), 0.001);
    }

    #[test]
    fn non_increasing_after_warmup() {
        let cfg = TrainConfig::default();
        for e in cfg.warmup..cfg.epochs - 1 {
            assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    #[test]
    fn warmup_must_precede_milestones() {
        let cfg = TrainConfig {
            warmup: 80,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
