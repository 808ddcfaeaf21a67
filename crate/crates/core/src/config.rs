//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`model.`, `train.`, `data.`, `run.`). Values
//! are layered: built-in defaults, then a config file, then individual
//! overrides. [`RunConfig::dump`] writes every key, and parsing the dump
//! reproduces the same configuration.
//!
//! ```text
//! # comment
//! model.groups = 8
//! train.milestones = 70,100
//! data.source = synthetic
//! ```

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mstcn::BranchSet;
use crate::network::ModelConfig;
use crate::skeleton::shrec::{SHREC_JOINTS, TEST_INDEX, TRAIN_INDEX};
use crate::skeleton::synthetic::load_container;
use crate::skeleton::{generate_synthetic, SkeletonSequence};
use crate::training::TrainConfig;

/// Where sequences come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Generated in memory from `data.*` parameters.
    Synthetic,
    /// SHREC'17 / DHG directory under `data.root`.
    Shrec,
    /// Binary containers at `data.train_file` and `data.val_file`.
    Container,
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Synthetic => "synthetic",
            Self::Shrec => "shrec",
            Self::Container => "container",
        }
    }
}

impl Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Synthetic, Self::Shrec, Self::Container]
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown data source {s:?} (synthetic, shrec, container)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub root: PathBuf,
    pub train_index: String,
    pub test_index: String,
    pub train_file: PathBuf,
    pub val_file: PathBuf,
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub joints: usize,
    /// Frames of each generated sequence.
    pub length: usize,
    /// Seed of the training split; validation uses `seed + 1`.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            root: PathBuf::from("data/shrec17"),
            train_index: TRAIN_INDEX.into(),
            test_index: TEST_INDEX.into(),
            train_file: PathBuf::from("data/train.bin"),
            val_file: PathBuf::from("data/val.bin"),
            classes: 4,
            train_per_class: 16,
            val_per_class: 8,
            joints: 22,
            length: 30,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Directory for checkpoints, logs and exports.
    pub out: PathBuf,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Stop once train and validation accuracy reach these levels (0 disables).
    pub stop_train_acc: f64,
    pub stop_val_acc: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/dstsa"),
            checkpoint_every: 10,
            stop_train_acc: 0.0,
            stop_val_acc: 0.0,
        }
    }
}

/// Everything a command needs. `model.num_classes`, `model.joints` and
/// `model.input_frames` are not keys: they follow from the data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub run: RunOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            run: RunOptions::default(),
        };
        cfg.sync();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|x| parse(key, x)).collect()
}

fn list(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key, in dump order.
    pub const KEYS: &'static [&'static str] = &[
        "model.base_channels",
        "model.stage_depths",
        "model.groups",
        "model.theta",
        "model.branches",
        "model.static_init",
        "model.stca",
        "model.gcgc",
        "model.gtgc",
        "train.lr0",
        "train.weight_decay",
        "train.momentum",
        "train.nesterov",
        "train.milestones",
        "train.lr_divisor",
        "train.epochs",
        "train.warmup",
        "train.batch_size",
        "train.seed",
        "train.modality",
        "train.frames",
        "train.label28",
        "data.source",
        "data.root",
        "data.train_index",
        "data.test_index",
        "data.train_file",
        "data.val_file",
        "data.classes",
        "data.train_per_class",
        "data.val_per_class",
        "data.joints",
        "data.length",
        "data.seed",
        "run.out",
        "run.checkpoint_every",
        "run.stop_train_acc",
        "run.stop_val_acc",
    ];

    /// Current value of `key` in dump format.
    pub fn get(&self, key: &str) -> Result<String> {
        let (m, t, d, r) = (&self.model, &self.train, &self.data, &self.run);
        Ok(match key {
            "model.base_channels" => m.base_channels.to_string(),
            "model.stage_depths" => list(&m.stage_depths),
            "model.groups" => m.groups.to_string(),
            "model.theta" => m.theta.to_string(),
            "model.branches" => m.branches.to_string(),
            "model.static_init" => m.static_init.to_string(),
            "model.stca" => m.stca.to_string(),
            "model.gcgc" => m.gcgc.to_string(),
            "model.gtgc" => m.gtgc.to_string(),
            "train.lr0" => t.lr0.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.nesterov" => t.nesterov.to_string(),
            "train.milestones" => list(&t.milestones),
            "train.lr_divisor" => t.lr_divisor.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.warmup" => t.warmup.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.modality" => t.modality.to_string(),
            "train.frames" => t.frames.to_string(),
            "train.label28" => t.label28.to_string(),
            "data.source" => d.source.to_string(),
            "data.root" => d.root.display().to_string(),
            "data.train_index" => d.train_index.clone(),
            "data.test_index" => d.test_index.clone(),
            "data.train_file" => d.train_file.display().to_string(),
            "data.val_file" => d.val_file.display().to_string(),
            "data.classes" => d.classes.to_string(),
            "data.train_per_class" => d.train_per_class.to_string(),
            "data.val_per_class" => d.val_per_class.to_string(),
            "data.joints" => d.joints.to_string(),
            "data.length" => d.length.to_string(),
            "data.seed" => d.seed.to_string(),
            "run.out" => r.out.display().to_string(),
            "run.checkpoint_every" => r.checkpoint_every.to_string(),
            "run.stop_train_acc" => r.stop_train_acc.to_string(),
            "run.stop_val_acc" => r.stop_val_acc.to_string(),
            _ => return Err(unknown(&[key])),
        })
    }

    /// Set one key; derived model fields are refreshed.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let k = key.trim();
        let (m, t, d, r) = (&mut self.model, &mut self.train, &mut self.data, &mut self.run);
        match k {
            "model.base_channels" => m.base_channels = parse(k, v)?,
            "model.stage_depths" => m.stage_depths = parse_list(k, v)?,
            "model.groups" => m.groups = parse(k, v)?,
            "model.theta" => m.theta = parse(k, v)?,
            "model.branches" => m.branches = v.parse::<BranchSet>()?,
            "model.static_init" => m.static_init = parse(k, v)?,
            "model.stca" => m.stca = parse(k, v)?,
            "model.gcgc" => m.gcgc = parse(k, v)?,
            "model.gtgc" => m.gtgc = parse(k, v)?,
            "train.lr0" => t.lr0 = parse(k, v)?,
            "train.weight_decay" => t.weight_decay = parse(k, v)?,
            "train.momentum" => t.momentum = parse(k, v)?,
            "train.nesterov" => t.nesterov = parse(k, v)?,
            "train.milestones" => t.milestones = parse_list(k, v)?,
            "train.lr_divisor" => t.lr_divisor = parse(k, v)?,
            "train.epochs" => t.epochs = parse(k, v)?,
            "train.warmup" => t.warmup = parse(k, v)?,
            "train.batch_size" => t.batch_size = parse(k, v)?,
            "train.seed" => t.seed = parse(k, v)?,
            "train.modality" => t.modality = parse(k, v)?,
            "train.frames" => t.frames = parse(k, v)?,
            "train.label28" => t.label28 = parse(k, v)?,
            "data.source" => d.source = parse(k, v)?,
            "data.root" => d.root = PathBuf::from(v),
            "data.train_index" => d.train_index = v.to_string(),
            "data.test_index" => d.test_index = v.to_string(),
            "data.train_file" => d.train_file = PathBuf::from(v),
            "data.val_file" => d.val_file = PathBuf::from(v),
            "data.classes" => d.classes = parse(k, v)?,
            "data.train_per_class" => d.train_per_class = parse(k, v)?,
            "data.val_per_class" => d.val_per_class = parse(k, v)?,
            "data.joints" => d.joints = parse(k, v)?,
            "data.length" => d.length = parse(k, v)?,
            "data.seed" => d.seed = parse(k, v)?,
            "run.out" => r.out = PathBuf::from(v),
            "run.checkpoint_every" => r.checkpoint_every = parse(k, v)?,
            "run.stop_train_acc" => r.stop_train_acc = parse(k, v)?,
            "run.stop_val_acc" => r.stop_val_acc = parse(k, v)?,
            _ => return Err(unknown(&[k])),
        }
        self.sync();
        Ok(())
    }

    /// Apply `key = value` lines. All unknown keys are reported together.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: PathBuf::from("<config>"),
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        self.apply_pairs(&pairs)
    }

    /// Apply overrides, rejecting the whole set if any key is unknown.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let bad: Vec<&str> = pairs
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !Self::KEYS.contains(k))
            .collect();
        if !bad.is_empty() {
            return Err(unknown(&bad));
        }
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Format { line, msg, .. } => Error::Format {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    /// Every key, one `key = value` line each.
    pub fn dump(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Copy data-dependent settings into the model.
    fn sync(&mut self) {
        let (classes, joints) = match self.data.source {
            DataSource::Shrec => (if self.train.label28 { 28 } else { 14 }, SHREC_JOINTS),
            _ => (self.data.classes, self.data.joints),
        };
        self.model.num_classes = classes;
        self.model.joints = joints;
        self.model.input_frames = self.train.frames;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.source == DataSource::Synthetic && (d.classes < 2 || d.train_per_class == 0 || d.length < 2) {
            return Err(Error::Config(
                "synthetic data needs classes >= 2, train_per_class >= 1 and length >= 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.run.stop_train_acc) || !(0.0..=1.0).contains(&self.run.stop_val_acc) {
            return Err(Error::Config("stop accuracies must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `(train, validation)` sequences. Containers with a different joint
    /// count than configured are rejected.
    pub fn load_data(&self) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
        let d = &self.data;
        let (train, val) = match d.source {
            DataSource::Synthetic => (
                generate_synthetic(d.classes, d.train_per_class, d.joints, d.length, d.seed)?,
                if d.val_per_class == 0 {
                    Vec::new()
                } else {
                    generate_synthetic(d.classes, d.val_per_class, d.joints, d.length, d.seed.wrapping_add(1))?
                },
            ),
            DataSource::Shrec => (
                crate::skeleton::parse_shrec(&d.root, &d.train_index)?,
                crate::skeleton::parse_shrec(&d.root, &d.test_index)?,
            ),
            DataSource::Container => (load_container(&d.train_file)?, load_container(&d.val_file)?),
        };
        for s in train.iter().chain(&val) {
            if s.joints() != self.model.joints {
                return Err(Error::Integrity(format!(
                    "sequence has {} joints, configuration expects {}",
                    s.joints(),
                    self.model.joints
                )));
            }
        }
        Ok((train, val))
    }
}

fn unknown(keys: &[&str]) -> Error {
    Error::Config(format!("unknown configuration key(s): {}", keys.join(", ")))
}

/// Split `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("model.groups = 4\ntrain.lr0 = 0.035\ntrain.milestones = 5,9\ntrain.warmup = 2\nmodel.branches = g1,S\n")
            .unwrap();
        assert_eq!(RunConfig::from_text(&cfg.dump()).unwrap(), cfg);
        assert_eq!(RunConfig::from_text(&RunConfig::default().dump()).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_gets_and_sets() {
        let mut cfg = RunConfig::default();
        for k in RunConfig::KEYS {
            let v = cfg.get(k).unwrap();
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_all_named() {
        let err = RunConfig::from_text("ker = 3\nmodel.groups = 4\ntrain.lr = 1\n").unwrap_err().to_string();
        assert!(err.contains("ker") && err.contains("train.lr"), "{err}");
    }

    #[test]
    fn bad_value_names_key() {
        let err = RunConfig::from_text("train.epochs = many").unwrap_err().to_string();
        assert!(err.contains("train.epochs"), "{err}");
    }

    #[test]
    fn later_layers_win() {
        let mut cfg = RunConfig::from_text("train.epochs = 9\ntrain.seed = 3").unwrap();
        cfg.apply_pairs(&[parse_override("train.epochs=4").unwrap()]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed), (4, 3));
    }

    #[test]
    fn model_follows_data() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("data.classes = 6\ntrain.frames = 40").unwrap();
        assert_eq!((cfg.model.num_classes, cfg.model.input_frames), (6, 40));
        cfg.apply_text("data.source = shrec\ntrain.label28 = true").unwrap();
        assert_eq!((cfg.model.num_classes, cfg.model.joints), (28, 22));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::from_text("# header\n\ntrain.epochs = 3 # trailing\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }
}
