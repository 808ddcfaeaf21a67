//! The `dstsa` command line: train, eval, verify, export and summary.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::autodiff::{inject_tanh_backward_sign_flip, Tape};
use crate::config::{parse_override, RunConfig};
use crate::error::{Error, Result};
use crate::network::{cam, count_params_flops, Checkpoint, Model};
use crate::nn::Ctx;
use crate::params::{ParamStore, RunningStats};
use crate::runtime::{init_threads, threads_from_env};
use crate::skeleton::{stack_batch, GraphSpec, SampleMode, SkeletonSequence};
use crate::tensor::Tensor;
use crate::training::{argmax, evaluate, fuse_scores, prepare_input, Confusion, EpochStats, Trainer, LOG_HEADER};
use crate::verify::suite;

#[derive(Parser, Debug)]
#[command(name = "dstsa", version, about = "Skeleton gesture recognition with dynamic spatio-temporal graph convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model, writing checkpoints, a TSV log and a metrics JSON.
    Train(TrainArgs),
    /// Score checkpoints on the validation split, fusing their modalities.
    Eval(EvalArgs),
    /// Run the gradient and oracle self-checks.
    Verify(VerifyArgs),
    /// Write learned topologies or class activation maps.
    Export(ExportArgs),
    /// Print parameter and multiply-add counts per block.
    Summary(ConfigArgs),
}

/// Configuration layering shared by every command that builds a model.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// key = value file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=60`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `data.source=synthetic`.
    #[arg(long)]
    pub synthetic: bool,
    /// Shorthand for `data.classes`.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Shorthand for `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Shorthand for `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        if self.synthetic {
            pairs.push(("data.source".into(), "synthetic".into()));
        }
        let mut short = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        short("data.classes", self.classes.map(|x| x.to_string()));
        short("train.epochs", self.epochs.map(|x| x.to_string()));
        short("train.seed", self.seed.map(|x| x.to_string()));
        short("run.out", self.out.as_ref().map(|p| p.display().to_string()));
        for o in &self.overrides {
            pairs.push(parse_override(o)?);
        }
        Ok(pairs)
    }

    /// `base` (defaults or a checkpoint's config), then the file, then flags.
    pub fn resolve(&self, base: Option<&str>) -> Result<RunConfig> {
        let mut cfg = match base {
            Some(text) => RunConfig::from_text(text)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_pairs(&self.pairs()?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One checkpoint per modality. Repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Fusion weight per checkpoint, comma separated (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<f64>,
    /// Overrides applied to every checkpoint's configuration (data paths, typically).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for confusion matrices and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Negate the tanh derivative.
    TanhBackward,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Only run checks whose name contains this text.
    #[arg(long)]
    pub only: Option<String>,
    /// Deliberately break an operation to confirm the suite notices.
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Topology,
    Cam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    /// Graph layer, e.g. `blocks.9` (default: the last).
    #[arg(long)]
    pub layer: Option<String>,
    /// Validation sample used for dynamic topologies and CAMs.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Export the per-frame temporal graphs of `--sample` instead of the static bank.
    #[arg(long)]
    pub dynamic: bool,
    /// CAM class (default: the predicted one).
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ExportFormat,
    /// Output file (default: under `run.out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// A command's failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: a check did not pass.
    Check(String),
    /// Exit 1 or 2 depending on the kind.
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Error(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Check(_) => 1,
            Self::Error(Error::Config(_) | Error::Format { .. }) => 2,
            Self::Error(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Check(m) => f.write_str(m),
            Self::Error(e) => write!(f, "{e}"),
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    init_threads(threads_from_env()?);
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Export(a) => cmd_export(&a),
        Command::Summary(a) => cmd_summary(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    epochs_completed: usize,
    final_train_acc: Option<f64>,
    final_val_acc: Option<f64>,
    best_val_acc: Option<f64>,
    history: &'a [EpochStats],
    config: String,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let resumed = a.resume.as_deref().map(Checkpoint::<f32>::load).transpose()?;
    let cfg = a.cfg.resolve(resumed.as_ref().map(|c| c.config.as_str()))?;
    let (train, val) = cfg.load_data()?;
    let (n_train, n_val) = (train.len(), val.len());
    let mut trainer = Trainer::new(&cfg.model, cfg.train.clone(), train, val)?;
    if let Some(ckpt) = &resumed {
        trainer.resume(ckpt)?;
    }
    let out = &cfg.run.out;
    create_dir(out)?;
    let config_text = cfg.dump();
    write_file(&out.join("config.txt"), &config_text)?;
    let log_path = out.join("train_log.tsv");
    let mut log = if resumed.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        File::create(&log_path).and_then(|mut f| writeln!(f, "{LOG_HEADER}").map(|_| f))
    }
    .map_err(|e| Error::io(&log_path, e))?;
    eprintln!(
        "training {} samples ({} val) for epochs {}..{}, {} parameters",
        n_train,
        n_val,
        trainer.epoch() + 1,
        cfg.train.epochs,
        trainer.model.param_count()
    );
    while !trainer.is_finished() {
        let s = trainer.train_epoch()?;
        writeln!(log, "{}", s.to_tsv()).map_err(|e| Error::io(&log_path, e))?;
        eprintln!(
            "epoch {:>4}  lr {:.5}  loss {:.4}  train {:.3}  val {}  {:.1}s",
            s.epoch,
            s.lr,
            s.train_loss,
            s.train_acc,
            s.val_acc.map_or("-".into(), |v| format!("{v:.3}")),
            s.wall_seconds
        );
        let every = cfg.run.checkpoint_every;
        if every > 0 && s.epoch % every == 0 {
            trainer.checkpoint(config_text.clone()).save(&out.join(checkpoint_name(s.epoch)))?;
        }
        let reached = cfg.run.stop_train_acc > 0.0
            && s.train_acc >= cfg.run.stop_train_acc
            && s.val_acc.is_none_or(|v| v >= cfg.run.stop_val_acc);
        if reached {
            eprintln!("stopping: accuracy targets reached");
            break;
        }
    }
    trainer.checkpoint(config_text.clone()).save(&out.join(LAST_CHECKPOINT))?;
    let h = trainer.history();
    let metrics = TrainMetrics {
        epochs_completed: trainer.epoch(),
        final_train_acc: h.last().map(|s| s.train_acc),
        final_val_acc: h.last().and_then(|s| s.val_acc),
        best_val_acc: h.iter().filter_map(|s| s.val_acc).reduce(f64::max),
        history: h,
        config: config_text,
    };
    write_file(&out.join("metrics.json"), serde_json::to_string_pretty(&metrics).map_err(Error::from)?)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// A checkpoint rebuilt into a model.
pub struct Loaded {
    pub cfg: RunConfig,
    pub model: Model,
    pub params: ParamStore<f32>,
    pub stats: RunningStats<f32>,
}

pub fn load_checkpoint(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    let mut cfg = RunConfig::from_text(&ckpt.config)?;
    let pairs = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
    cfg.apply_pairs(&pairs)?;
    cfg.validate()?;
    let (model, mut params, mut stats) = Model::new::<f32>(&cfg.model, cfg.train.seed)?;
    ckpt.restore(&mut params, &mut stats)
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        cfg,
        model,
        params,
        stats,
    })
}

fn eval_inputs(cfg: &RunConfig, seqs: &[SkeletonSequence]) -> Result<(Vec<Tensor<f64>>, Vec<usize>)> {
    let graph = GraphSpec::for_joints(cfg.model.joints)?;
    let inputs = seqs
        .iter()
        .map(|s| prepare_input(s, cfg.train.modality, &graph, cfg.train.frames, SampleMode::Uniform, 0))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label(cfg.train.label28)).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.model.num_classes) {
        return Err(Error::Integrity(format!(
            "data has label {bad} but the checkpoint has {} classes",
            cfg.model.num_classes
        )));
    }
    Ok((inputs, labels))
}

#[derive(Serialize)]
struct EvalReport {
    modalities: Vec<(String, f64)>,
    fused_accuracy: f64,
    weights: Vec<f64>,
    samples: usize,
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let weights = if a.weights.is_empty() {
        vec![1.0; a.checkpoints.len()]
    } else {
        a.weights.clone()
    };
    if weights.len() != a.checkpoints.len() {
        return Err(Error::Config(format!("{} weights for {} checkpoints", weights.len(), a.checkpoints.len())).into());
    }
    let mut all_scores = Vec::new();
    let mut per_modality = Vec::new();
    let mut reference: Option<(RunConfig, Vec<usize>)> = None;
    for path in &a.checkpoints {
        let l = load_checkpoint(path, &a.overrides)?;
        let (_, val) = l.cfg.load_data()?;
        let (inputs, labels) = eval_inputs(&l.cfg, &val)?;
        if let Some((first, first_labels)) = &reference {
            if first.data != l.cfg.data || *first_labels != labels || first.model.num_classes != l.cfg.model.num_classes {
                return Err(Error::Integrity(format!("{} was trained on different data or classes", path.display())).into());
            }
        }
        let e = evaluate(&l.model, &l.params, &l.stats, &inputs, &labels, l.cfg.train.batch_size)?;
        let name = l.cfg.train.modality.to_string();
        println!("{name:<14} accuracy {:.4}  ({})", e.accuracy, path.display());
        per_modality.push((name, e.accuracy, e.confusion));
        all_scores.push(e.scores);
        if reference.is_none() {
            reference = Some((l.cfg, labels));
        }
    }
    let (cfg, labels) = reference.expect("at least one checkpoint");
    let (_, predicted) = fuse_scores(&all_scores, &weights)?;
    let confusion = Confusion::from_predictions(cfg.model.num_classes, &labels, &predicted);
    println!("{:<14} accuracy {:.4}  ({} samples)", "fused", confusion.accuracy(), labels.len());
    let out = a.out.clone().unwrap_or_else(|| cfg.run.out.clone());
    create_dir(&out)?;
    for (name, _, c) in &per_modality {
        write_file(&out.join(format!("confusion_{name}.csv")), c.to_csv())?;
    }
    write_file(&out.join("confusion_fused.csv"), confusion.to_csv())?;
    let report = EvalReport {
        modalities: per_modality.iter().map(|(n, acc, _)| (n.clone(), *acc)).collect(),
        fused_accuracy: confusion.accuracy(),
        weights,
        samples: labels.len(),
    };
    write_file(&out.join("eval.json"), serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Failure> {
    if a.inject_fault == Some(Fault::TanhBackward) {
        eprintln!("injected fault: tanh derivative sign flipped");
        inject_tanh_backward_sign_flip(true);
    }
    let start = Instant::now();
    let results = suite::run(a.only.as_deref(), |r| {
        println!(
            "{}  {:<26} {:>7.2}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    });
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    println!(
        "{} checks, {} failed, {:.1}s",
        results.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    match failed.first() {
        Some(r) => Err(Failure::Check(format!("{}: {}", r.name, r.detail))),
        None if results.is_empty() => Err(Error::Config("no check matches the filter".into()).into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
pub struct TopologyRow {
    pub layer: String,
    pub group: usize,
    /// -1 for the static bank.
    pub frame: i64,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

fn layer_index(model: &Model, name: Option<&str>) -> Result<usize> {
    let names = model.layer_names();
    match name {
        None => Ok(names.len() - 1),
        Some(n) => names
            .iter()
            .position(|x| x == n)
            .ok_or_else(|| Error::Input(format!("unknown layer {n:?}; layers: {}", names.join(", ")))),
    }
}

/// Forward one validation sample in eval mode; returns the block inputs,
/// final features, logits and the tape holding them.
fn trace_sample(l: &Loaded, sample: usize) -> Result<(Tape<f32>, Vec<crate::autodiff::Var>, crate::network::ModelOutput)> {
    let (_, val) = l.cfg.load_data()?;
    let seq = val
        .get(sample)
        .ok_or_else(|| Error::Input(format!("sample {sample} out of range ({} validation sequences)", val.len())))?;
    let (inputs, _) = eval_inputs(&l.cfg, std::slice::from_ref(seq))?;
    let mut tape = Tape::new();
    let mut stats = l.stats.clone();
    let x = tape.constant(stack_batch::<f32>(&[&inputs[0]])?);
    let mut ctx = Ctx::new(&mut tape, &l.params, &mut stats, false);
    let (out, block_inputs) = l.model.trace(&mut ctx, x)?;
    Ok((tape, block_inputs, out))
}

pub fn topology_rows(l: &Loaded, layer: usize, dynamic_sample: Option<usize>) -> Result<Vec<TopologyRow>> {
    let name = l.model.layer_names()[layer].clone();
    let block = &l.model.blocks[layer];
    let v = l.cfg.model.joints;
    let mut rows = Vec::new();
    let mut push = |group: usize, frame: i64, data: &[f64]| {
        for i in 0..v {
            for j in 0..v {
                rows.push(TopologyRow {
                    layer: name.clone(),
                    group,
                    frame,
                    i,
                    j,
                    value: data[i * v + j],
                });
            }
        }
    };
    match dynamic_sample {
        None => {
            let g = block
                .graph
                .gcgc
                .as_ref()
                .ok_or_else(|| Error::Input(format!("{name} has no static topology (GC-GC disabled)")))?;
            let bank = l.params.get(g.bank).value.to_f64_vec();
            for (k, chunk) in bank.chunks(v * v).enumerate() {
                push(k, -1, chunk);
            }
        }
        Some(sample) => {
            let g = block
                .graph
                .gtgc
                .as_ref()
                .ok_or_else(|| Error::Input(format!("{name} has no temporal topology (GT-GC disabled)")))?;
            let (mut tape, inputs, _) = trace_sample(l, sample)?;
            let mut stats = l.stats.clone();
            let mut ctx = Ctx::new(&mut tape, &l.params, &mut stats, false);
            let a_t = g.topology(&mut ctx, inputs[layer])?;
            let value = ctx.tape.value(a_t);
            let (k, t) = (value.shape()[1], value.shape()[2]);
            let data = value.to_f64_vec();
            for grp in 0..k {
                for frame in 0..t {
                    let off = (grp * t + frame) * v * v;
                    push(grp, frame as i64, &data[off..off + v * v]);
                }
            }
        }
    }
    Ok(rows)
}

fn cmd_export(a: &ExportArgs) -> Result<(), Failure> {
    let l = load_checkpoint(&a.checkpoint, &a.overrides)?;
    let layer = layer_index(&l.model, a.layer.as_deref())?;
    let ext = match a.format {
        ExportFormat::Csv => "csv",
        ExportFormat::Json => "json",
    };
    let text = match a.what {
        ExportWhat::Topology => {
            let sample = if a.dynamic { Some(a.sample.unwrap_or(0)) } else { None };
            let rows = topology_rows(&l, layer, sample)?;
            match a.format {
                ExportFormat::Json => serde_json::to_string_pretty(&rows).map_err(Error::from)?,
                ExportFormat::Csv => {
                    let mut s = String::from("layer,group,frame,i,j,value\n");
                    for r in &rows {
                        s.push_str(&format!("{},{},{},{},{},{}\n", r.layer, r.group, r.frame, r.i, r.j, r.value));
                    }
                    s
                }
            }
        }
        ExportWhat::Cam => {
            let sample = a.sample.unwrap_or(0);
            let (tape, _, out) = trace_sample(&l, sample)?;
            let logits = tape.value(out.logits).to_f64_vec();
            let class = a.class.unwrap_or_else(|| argmax(&logits));
            let feats = tape.value(out.features);
            let s = feats.shape().to_vec();
            let feats = feats.reshape(&s[1..])?;
            let map = cam(&feats, &l.params.get(l.model.head.weight).value, class)?;
            let (t, v) = (map.shape()[0], map.shape()[1]);
            match a.format {
                ExportFormat::Json => serde_json::to_string_pretty(&serde_json::json!({
                    "sample": sample,
                    "class": class,
                    "normalization": "min-max over all (frame, joint) entries to [0, 1]",
                    "map": map.data().chunks(v).collect::<Vec<_>>(),
                }))
                .map_err(Error::from)?,
                ExportFormat::Csv => {
                    let mut s = format!(
                        "# sample={sample} class={class} frames={t} joints={v} normalization=min-max over all (frame, joint) entries to [0, 1]\nframe"
                    );
                    for j in 0..v {
                        s.push_str(&format!(",j{j}"));
                    }
                    s.push('\n');
                    for (ti, row) in map.data().chunks(v).enumerate() {
                        s.push_str(&ti.to_string());
                        for x in row {
                            s.push_str(&format!(",{x}"));
                        }
                        s.push('\n');
                    }
                    s
                }
            }
        }
    };
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            create_dir(&l.cfg.run.out)?;
            let what = match a.what {
                ExportWhat::Topology if a.dynamic => "topology_dynamic",
                ExportWhat::Topology => "topology",
                ExportWhat::Cam => "cam",
            };
            l.cfg.run.out.join(format!("{what}_{}.{ext}", l.model.layer_names()[layer]))
        }
    };
    write_file(&path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_summary(a: &ConfigArgs) -> Result<(), Failure> {
    let cfg = a.resolve(None)?;
    let (model, _, _) = Model::new::<f32>(&cfg.model, 0)?;
    let v = cfg.model.joints;
    let mut t = cfg.train.frames;
    println!("{:<10} {:>5} {:>5} {:>6} {:>7} {:>12} {:>12}", "block", "cin", "cout", "stride", "frames", "params", "MFLOPs");
    for (name, b) in model.layer_names().iter().zip(&model.blocks) {
        let (f, tout) = b.flops(t, v)?;
        println!(
            "{name:<10} {:>5} {:>5} {:>6} {:>7} {:>12} {:>12.2}",
            b.cin,
            b.cout,
            b.stride,
            tout,
            b.param_count(),
            f as f64 / 1e6
        );
        t = tout;
    }
    let (params, flops) = count_params_flops(&cfg.model)?;
    println!(
        "total: {params} parameters ({:.2}M), {:.3} GFLOPs per sample at T={}, V={v}, K={}",
        params as f64 / 1e6,
        flops as f64 / 1e9,
        cfg.train.frames,
        cfg.model.groups
    );
    Ok(())
}
