//! Acceptance criteria C1 to C10, one PASS/FAIL/WARN/SKIP line each on stderr.
//!
//! C8 and C9 train real models and dominate the runtime (roughly ten and
//! seven minutes on one core). C10 needs the SHREC'17 data and only runs when
//! `DSTSA_SHREC_ROOT` points at it.

use std::io::Write;
use std::time::Instant;

use dstsa::config::{DataSource, RunConfig};
use dstsa::graph_conv::{GraphConv, GraphConvConfig};
use dstsa::network::ModelConfig;
use dstsa::nn::Builder;
use dstsa::params::{ParamStore, RunningStats};
use dstsa::skeleton::GraphSpec;
use dstsa::topology::{StaticInit, Theta};
use dstsa::training::{lr_at, TrainConfig, Trainer};
use dstsa::verify::oracles::{equivariance_oracle, grouping_oracle, param_count_gap, pooling_oracle, reduction_oracle};
use dstsa::verify::suite::{
    composite_cases, micro_model_gradcheck, op_cases, run_cases, CONVEXITY_TOL, EQUIVARIANCE_TOL, MODEL_TOL, ORACLE_TOL,
    PER_OP_TOL,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// Soft criterion not met.
    Warn,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn report(id: &str, title: &str, o: &Outcome, seconds: f64) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Warn => "WARN",
        Status::Skip => "SKIP",
    };
    let _ = writeln!(std::io::stderr().lock(), "{id:<3} {tag}  {title} ({seconds:.1}s): {}", o.detail);
}

fn progress(msg: String) {
    let _ = writeln!(std::io::stderr().lock(), "      {msg}");
}

fn c1_gradients() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (ops, composites, model) = pool.install(|| {
        (
            run_cases(&op_cases(), 3).unwrap(),
            run_cases(&composite_cases(), 3).unwrap(),
            micro_model_gradcheck(usize::MAX).unwrap(),
        )
    });
    let seconds = start.elapsed().as_secs_f64();
    let worst_op = ops
        .iter()
        .chain(&composites)
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .unwrap();
    let ok = worst_op.1.max_rel_err <= PER_OP_TOL && model.max_rel_err <= MODEL_TOL && seconds <= 300.0;
    outcome(
        ok,
        format!(
            "{} ops worst {} {:.2e} (tol {PER_OP_TOL:.0e}); micro model {} entries worst {:.2e} (tol {MODEL_TOL:.0e}); {seconds:.0}s on one thread (limit 300s)",
            ops.len() + composites.len(),
            worst_op.0,
            worst_op.1.max_rel_err,
            model.checked,
            model.max_rel_err
        ),
    )
}

fn bounded(err: f64, tol: f64, what: &str) -> Outcome {
    outcome(err <= tol, format!("{what} max abs err {err:.2e} (tol {tol:.0e})"))
}

fn c5_pooling() -> Outcome {
    let r = pooling_oracle(50).unwrap();
    outcome(
        r.weight_sum_err <= CONVEXITY_TOL && r.range_violation <= 0.0 && r.reference_err <= ORACLE_TOL,
        format!(
            "weight sums within {:.2e} of 1 (tol {CONVEXITY_TOL:.0e}), TGP range violation {:.2e}, loop reference err {:.2e}",
            r.weight_sum_err, r.range_violation, r.reference_err
        ),
    )
}

fn layer_count(groups: usize, joints: usize) -> usize {
    let cfg = GraphConvConfig {
        cin: 64,
        cout: 64,
        groups,
        theta: Theta::Tanh,
        static_init: StaticInit::Random,
        stca: true,
        gcgc: true,
        gtgc: true,
    };
    let mut params = ParamStore::<f32>::new();
    let mut stats = RunningStats::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = Builder {
        params: &mut params,
        stats: &mut stats,
        rng: &mut rng,
    };
    GraphConv::new(&mut b, "g", &cfg, &GraphSpec::for_joints(joints).unwrap()).unwrap();
    params.numel()
}

fn c6_param_gap() -> Outcome {
    let v = 22;
    let per_layer = layer_count(8, v) as i64 - layer_count(4, v) as i64;
    let (model_gap, layers) = param_count_gap(&ModelConfig::default()).unwrap();
    let want = (4 * v * v) as i64;
    outcome(
        per_layer == want && model_gap == want * layers as i64,
        format!(
            "graph layer: count(K=8) - count(K=4) = {per_layer}, 4*V^2 = {want}; default model: {model_gap} = {layers} layers x {want}"
        ),
    )
}

fn c7_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let (a, b) = (lr_at(75, &cfg), lr_at(105, &cfg));
    outcome(a == 0.01 && b == 0.001, format!("lr_at(75) = {a}, lr_at(105) = {b}"))
}

/// Schedule for the 64-sample synthetic set: the SHREC'17 recipe's batch of
/// 64 would give one step per epoch, so the batch and warmup shrink.
fn desk_schedule(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr0: 0.05,
        warmup: 5,
        milestones: vec![150, 180],
        epochs,
        batch_size: 16,
        frames: 30,
        seed,
        ..TrainConfig::default()
    }
}

fn desk_data() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_pairs(&[("data.source".into(), "synthetic".into())]).unwrap();
    cfg
}

fn c8_learning() -> Outcome {
    let cfg = desk_data();
    let (train, val) = cfg.load_data().unwrap();
    let (n_train, n_val) = (train.len(), val.len());
    let model = ModelConfig {
        num_classes: 4,
        input_frames: 30,
        ..ModelConfig::default()
    };
    let mut t = Trainer::new(&model, desk_schedule(1, 200), train, val).unwrap();
    let start = Instant::now();
    let mut reached = None;
    while !t.is_finished() {
        let s = t.train_epoch().unwrap();
        let val = s.val_acc.unwrap();
        if s.epoch.is_multiple_of(10) {
            progress(format!(
                "C8 epoch {} loss {:.3} train {:.3} val {val:.3} {:.0}s",
                s.epoch,
                s.train_loss,
                s.train_acc,
                start.elapsed().as_secs_f64()
            ));
        }
        if s.train_acc >= 0.95 && val >= 0.8 {
            reached = Some(s);
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let threads = rayon::current_num_threads();
    match reached {
        Some(s) => outcome(
            seconds <= 900.0,
            format!(
                "{n_train} train / {n_val} val, epoch {}: train {:.3}, val {:.3}, {seconds:.0}s on {threads} thread(s) (limit 900s)",
                s.epoch,
                s.train_acc,
                s.val_acc.unwrap()
            ),
        ),
        None => {
            let last = t.history().last().unwrap();
            outcome(
                false,
                format!(
                    "targets not reached in 200 epochs: final train {:.3}, val {:.3}, {seconds:.0}s",
                    last.train_acc,
                    last.val_acc.unwrap()
                ),
            )
        }
    }
}

/// Mean validation accuracy over the last five of 40 epochs of a reduced
/// model (base 16, one block per stage), averaged over three seeds.
fn ablation_score(gcgc: bool, gtgc: bool) -> f64 {
    let cfg = desk_data();
    let mut total = 0.0;
    for seed in 1..=3 {
        let (train, val) = cfg.load_data().unwrap();
        let model = ModelConfig {
            base_channels: 16,
            stage_depths: vec![1, 1, 1],
            num_classes: 4,
            input_frames: 30,
            gcgc,
            gtgc,
            ..ModelConfig::default()
        };
        let mut t = Trainer::new(&model, desk_schedule(seed, 40), train, val).unwrap();
        while !t.is_finished() {
            t.train_epoch().unwrap();
        }
        let tail: Vec<f64> = t.history().iter().rev().take(5).map(|s| s.val_acc.unwrap()).collect();
        total += tail.iter().sum::<f64>() / tail.len() as f64;
    }
    total / 3.0
}

fn c9_ablation() -> Outcome {
    let full = ablation_score(true, true);
    let no_gc = ablation_score(false, true);
    let no_gt = ablation_score(true, false);
    let ok = no_gc <= full && no_gt <= full;
    Outcome {
        status: if ok { Status::Pass } else { Status::Warn },
        detail: format!("val accuracy full {full:.3}, without GC-GC {no_gc:.3}, without GT-GC {no_gt:.3}"),
    }
}

fn c10_dataset() -> Outcome {
    let Some(root) = std::env::var_os("DSTSA_SHREC_ROOT") else {
        return Outcome {
            status: Status::Skip,
            detail: "set DSTSA_SHREC_ROOT to a SHREC'17 directory to run".into(),
        };
    };
    let mut cfg = RunConfig::default();
    let pairs = [
        ("data.source".to_string(), DataSource::Shrec.to_string()),
        ("data.root".to_string(), root.to_string_lossy().into_owned()),
    ];
    if let Err(e) = cfg.apply_pairs(&pairs) {
        return outcome(false, format!("bad configuration: {e}"));
    }
    let run = || -> dstsa::Result<(usize, f64)> {
        let (train, val) = cfg.load_data()?;
        let mut t = Trainer::new(&cfg.model, cfg.train.clone(), train, val)?;
        while !t.is_finished() {
            let s = t.train_epoch()?;
            progress(format!("C10 epoch {} train {:.3} val {:.3}", s.epoch, s.train_acc, s.val_acc.unwrap_or(f64::NAN)));
        }
        Ok((t.epoch(), t.history().last().and_then(|s| s.val_acc).unwrap_or(f64::NAN)))
    };
    match run() {
        Ok((epochs, acc)) => Outcome {
            status: Status::Pass,
            detail: format!("{epochs} epochs, joint-modality test accuracy {:.2}% (published reference 96.67%)", acc * 100.0),
        },
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("C1", "gradient integrity", c1_gradients),
        ("C2", "reduction oracle", || bounded(reduction_oracle(20).unwrap(), ORACLE_TOL, "20 instances:")),
        ("C3", "grouping oracle", || bounded(grouping_oracle(&[2, 4, 8], 3).unwrap(), ORACLE_TOL, "K in {2, 4, 8}:")),
        ("C4", "permutation equivariance", || {
            let (joint, frame) = equivariance_oracle(10).unwrap();
            outcome(
                joint <= EQUIVARIANCE_TOL && frame <= EQUIVARIANCE_TOL,
                format!("joints {joint:.2e}, frames {frame:.2e} (tol {EQUIVARIANCE_TOL:.0e})"),
            )
        }),
        ("C5", "pooling convexity", c5_pooling),
        ("C6", "parameter count vs groups", c6_param_gap),
        ("C7", "learning-rate schedule", c7_schedule),
        ("C8", "desk-scale learning", c8_learning),
        ("C9", "ablation direction (soft)", c9_ablation),
        ("C10", "SHREC'17 run (optional)", c10_dataset),
    ];
    let mut failed = Vec::new();
    for (id, title, check) in criteria {
        let start = Instant::now();
        let o = check();
        report(id, title, &o, start.elapsed().as_secs_f64());
        if o.status == Status::Fail {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
