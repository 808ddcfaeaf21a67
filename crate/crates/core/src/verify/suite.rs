//! The self-check suite behind `dstsa verify`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{gradcheck, gradcheck_params, GradCheckOptions, GradCheckReport};
use super::oracles::{
    equivariance_oracle, grouping_oracle, param_count_gap, pooling_oracle, random_tensor, reduction_oracle,
};
use crate::autodiff::{BnRunning, ConvGeometry, Tape, Unary, Var};
use crate::error::Result;
use crate::graph_conv::aggregate_temporal;
use crate::network::{cam, Checkpoint, Model, ModelConfig};
use crate::nn::Ctx;
use crate::params::{ParamStore, RunningStats};
use crate::pooling::{cgp, grouped_cgp, tgp};
use crate::skeleton::{
    derive_bone, derive_motion, generate_synthetic, reconstruct_from_bones, sample_indices, GraphSpec, SampleMode,
};
use crate::tensor::Tensor;
use crate::topology::{fuse_topology, pairwise_theta, Theta};
use crate::training::{fuse_scores, lr_at, TrainConfig};

pub const PER_OP_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-12;
pub const EQUIVARIANCE_TOL: f64 = 1e-10;
pub const CONVEXITY_TOL: f64 = 1e-6;

pub struct Check {
    pub name: &'static str,
    /// `Ok((passed, detail))`; an error counts as a failure.
    pub run: fn() -> Result<(bool, String)>,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Every differentiable primitive with the input shapes it is probed at.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let conv = |stride, dilation, padding, groups| ConvGeometry {
        stride,
        dilation,
        padding,
        groups,
    };
    let mut cases: Vec<(&'static str, Vec<Vec<usize>>, Build)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_broadcast", vec![vec![2, 3, 4, 5], vec![5, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add_broadcast", vec![vec![2, 3, 4], vec![3, 1]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub_broadcast", vec![vec![2, 3, 4], vec![4]], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul_broadcast", vec![vec![2, 1, 4], vec![3, 1]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul_scalar", vec![vec![2, 3], vec![]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("tanh", vec![vec![3, 5]], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![vec![3, 5]], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("hardswish", vec![vec![3, 5]], Box::new(|t, v| Ok(t.hardswish(v[0])))),
        ("scale", vec![vec![3, 5]], Box::new(|t, v| Ok(t.unary(v[0], Unary::Scale(-2.5))))),
        (
            "relu",
            vec![vec![3, 5]],
            // squared and shifted so no probe sits on the kink
            Box::new(|t, v| {
                let sq = t.mul(v[0], v[0])?;
                let c = t.constant(Tensor::full(&[], 0.01));
                let s = t.add(sq, c)?;
                Ok(t.relu(s))
            }),
        ),
        ("softmax", vec![vec![2, 4, 3]], Box::new(|t, v| t.softmax(v[0], 1))),
        ("sum", vec![vec![2, 4, 3]], Box::new(|t, v| t.sum(v[0], &[0, 2], false))),
        ("mean", vec![vec![2, 4, 3]], Box::new(|t, v| t.mean(v[0], &[1], true))),
        ("permute", vec![vec![2, 3, 4]], Box::new(|t, v| t.permute(v[0], &[2, 0, 1]))),
        ("reshape", vec![vec![2, 3, 4]], Box::new(|t, v| t.reshape(v[0], &[6, 4]))),
        ("narrow", vec![vec![2, 5, 3]], Box::new(|t, v| t.narrow(v[0], 1, 1, 3))),
        ("concat", vec![vec![2, 2, 3], vec![2, 4, 3]], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("max_pool", vec![vec![2, 3, 7, 2]], Box::new(|t, v| t.max_pool_temporal(v[0], 3, 2, 1))),
        (
            "batch_norm_train",
            vec![vec![3, 4, 5, 2], vec![4], vec![4]],
            Box::new(|t, v| t.batch_norm(v[0], v[1], v[2], &mut BnRunning::new(4), true)),
        ),
        (
            "batch_norm_eval",
            vec![vec![3, 4, 5, 2], vec![4], vec![4]],
            Box::new(|t, v| {
                let mut run = BnRunning {
                    mean: vec![0.1, -0.2, 0.3, 0.0],
                    var: vec![1.5, 0.5, 2.0, 1.0],
                    updates: 3,
                };
                t.batch_norm(v[0], v[1], v[2], &mut run, false)
            }),
        ),
        ("cross_entropy", vec![vec![4, 5]], Box::new(|t, v| t.cross_entropy(v[0], &[0, 4, 2, 2]))),
    ];
    for (name, geo, w) in [
        ("conv_temporal", conv(1, 1, 1, 1), vec![4, 4, 3]),
        ("conv_temporal_strided", conv(2, 2, 2, 1), vec![4, 4, 3]),
        ("conv_temporal_grouped", conv(1, 3, 3, 2), vec![4, 2, 3]),
        ("conv_pointwise_strided", conv(2, 1, 0, 1), vec![5, 4, 1]),
    ] {
        cases.push((
            name,
            vec![vec![2, 4, 8, 3], w],
            Box::new(move |t, v| t.conv_temporal(v[0], v[1], geo)),
        ));
    }
    cases
}

/// Composite graph operations, checked against the same finite differences.
pub fn composite_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let mut cases: Vec<(&'static str, Vec<Vec<usize>>, Build)> = vec![
        ("tgp", vec![vec![2, 3, 4, 5]], Box::new(|t, v| tgp(t, v[0]))),
        ("cgp", vec![vec![2, 3, 4, 5]], Box::new(|t, v| cgp(t, v[0]))),
        ("grouped_cgp", vec![vec![2, 4, 3, 5]], Box::new(|t, v| grouped_cgp(t, v[0], 2))),
        (
            "fuse_topology",
            vec![vec![2, 4, 3, 3], vec![], vec![2, 3, 3]],
            Box::new(|t, v| fuse_topology(t, v[0], v[1], v[2])),
        ),
    ];
    for theta in [Theta::Tanh, Theta::Relu, Theta::Sigmoid, Theta::Softmax] {
        let name = match theta {
            Theta::Tanh => "pairwise_tanh",
            Theta::Relu => "pairwise_relu",
            Theta::Sigmoid => "pairwise_sigmoid",
            Theta::Softmax => "pairwise_softmax",
        };
        cases.push((
            name,
            vec![vec![2, 3, 4], vec![2, 3, 4]],
            Box::new(move |t, v| pairwise_theta(t, v[0], v[1], theta)),
        ));
    }
    cases.push((
        "aggregate_temporal",
        vec![vec![2, 4, 3, 5], vec![2, 2, 3, 5, 5]],
        Box::new(|t, v| {
            let params = ParamStore::new();
            let mut stats = RunningStats::new();
            let mut ctx = Ctx::new(t, &params, &mut stats, false);
            aggregate_temporal(&mut ctx, v[0], v[1])
        }),
    ));
    cases
}

/// Worst report per case over `seeds` random inputs.
pub fn run_cases(cases: &[(&'static str, Vec<Vec<usize>>, Build)], seeds: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for (name, shapes, build) in cases {
        let mut worst = GradCheckReport::default();
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(s, 1.5, &mut rng)).collect();
            let opts = GradCheckOptions {
                seed,
                ..Default::default()
            };
            worst.merge(gradcheck(&inputs, |t, v| build(t, v), &opts)?);
        }
        out.push((*name, worst));
    }
    Ok(out)
}

fn summarize(reports: &[(&'static str, GradCheckReport)], tol: f64) -> (bool, String) {
    let failing: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !(r.max_rel_err <= tol))
        .map(|(n, r)| format!("{n} ({:.3e})", r.max_rel_err))
        .collect();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .map(|(n, r)| format!("{n} {:.3e}", r.max_rel_err))
        .unwrap_or_default();
    if failing.is_empty() {
        (true, format!("{} cases, worst {worst}, tol {tol:.0e}", reports.len()))
    } else {
        (false, format!("gradient check failed: {}", failing.join(", ")))
    }
}

/// Configuration of the end-to-end gradient check model.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        stage_depths: vec![1, 1, 1],
        num_classes: 3,
        joints: 5,
        input_frames: 8,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the cross-entropy loss of the micro model
/// (N = 2, T = 8, V = 5) against every parameter and the input.
pub fn micro_model_gradcheck(entries_per_tensor: usize) -> Result<GradCheckReport> {
    let cfg = micro_model_config();
    let (model, params, stats) = Model::new::<f64>(&cfg, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = params.clone();
    // perturb the scalars away from their symmetric starting values
    for p in store.iter_mut() {
        if p.value.rank() == 0 {
            p.value = random_tensor(&[], 0.8, &mut rng);
        }
    }
    let input_id = store.add("input", random_tensor(&[2, 3, 8, 5], 1.0, &mut rng), false)?;
    let labels = [0usize, 2];
    let build = |tape: &mut Tape<f64>, ps: &ParamStore<f64>| -> Result<Var> {
        let mut st = stats.clone();
        let mut ctx = Ctx::new(tape, ps, &mut st, true);
        let x = ctx.param(input_id);
        let out = model.forward(&mut ctx, x)?;
        ctx.tape.cross_entropy(out.logits, &labels)
    };
    let opts = GradCheckOptions {
        max_entries: Some(entries_per_tensor),
        seed: 5,
        ..Default::default()
    };
    gradcheck_params(&store, build, &opts)
}

fn check_ops() -> Result<(bool, String)> {
    Ok(summarize(&run_cases(&op_cases(), 3)?, PER_OP_TOL))
}

fn check_composites() -> Result<(bool, String)> {
    Ok(summarize(&run_cases(&composite_cases(), 3)?, PER_OP_TOL))
}

fn check_micro_model() -> Result<(bool, String)> {
    let r = micro_model_gradcheck(4)?;
    let ok = r.max_rel_err <= MODEL_TOL;
    let worst = r.worst.as_ref().map(|w| w.0.clone()).unwrap_or_default();
    let detail = format!("{} entries, worst {:.3e} at {worst}, tol {MODEL_TOL:.0e}", r.checked, r.max_rel_err);
    Ok((ok, if ok { detail } else { format!("gradient check failed: {detail}") }))
}

fn bound(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("max abs err {err:.3e}, tol {tol:.0e}"))
}

fn check_reduction() -> Result<(bool, String)> {
    Ok(bound(reduction_oracle(20)?, ORACLE_TOL))
}

fn check_grouping() -> Result<(bool, String)> {
    Ok(bound(grouping_oracle(&[2, 4, 8], 2)?, ORACLE_TOL))
}

fn check_equivariance() -> Result<(bool, String)> {
    let (j, f) = equivariance_oracle(5)?;
    Ok((
        j <= EQUIVARIANCE_TOL && f <= EQUIVARIANCE_TOL,
        format!("joint {j:.3e}, frame {f:.3e}, tol {EQUIVARIANCE_TOL:.0e}"),
    ))
}

fn check_pooling() -> Result<(bool, String)> {
    let r = pooling_oracle(20)?;
    Ok((
        r.weight_sum_err <= CONVEXITY_TOL && r.range_violation <= CONVEXITY_TOL && r.reference_err <= ORACLE_TOL,
        format!(
            "weight sum err {:.3e}, range violation {:.3e}, reference err {:.3e}",
            r.weight_sum_err, r.range_violation, r.reference_err
        ),
    ))
}

fn check_param_gap() -> Result<(bool, String)> {
    let cfg = ModelConfig::default();
    let (gap, layers) = param_count_gap(&cfg)?;
    let per_layer = 4 * (cfg.joints * cfg.joints) as i64;
    Ok((
        gap == per_layer * layers as i64,
        format!("count(K=8) - count(K=4) = {gap} = {layers} layers x 4V^2 ({per_layer})"),
    ))
}

fn check_schedule() -> Result<(bool, String)> {
    let cfg = TrainConfig::default();
    let (a, b) = (lr_at(75, &cfg), lr_at(105, &cfg));
    let monotone = (cfg.warmup..cfg.epochs).all(|e| lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
    Ok((
        a == 0.01 && b == 0.001 && monotone,
        format!("lr(75) = {a}, lr(105) = {b}, non-increasing after warmup: {monotone}"),
    ))
}

fn check_sampling() -> Result<(bool, String)> {
    let up = sample_indices(3, 6, SampleMode::Uniform, 0);
    let same = sample_indices(40, 12, SampleMode::Random, 9) == sample_indices(40, 12, SampleMode::Random, 9);
    let identity = sample_indices(150, 150, SampleMode::Uniform, 0) == (0..150).collect::<Vec<_>>();
    Ok((
        up == [0, 0, 1, 1, 2, 2] && same && identity,
        format!("uniform 3->6 {up:?}, seeded random repeatable: {same}, identity at T: {identity}"),
    ))
}

fn check_modalities() -> Result<(bool, String)> {
    let graph = GraphSpec::hand22();
    let seqs = generate_synthetic(2, 1, 22, 9, 3)?;
    let coords = &seqs[0].coords;
    let bones = derive_bone(coords, &graph)?;
    let root: Vec<f64> = (0..3 * 9).map(|r| coords.data()[r * 22 + graph.root()]).collect();
    let rebuilt = reconstruct_from_bones(&bones, &root, &graph);
    let bone_err = rebuilt.max_abs_diff(coords);
    let motion = derive_motion(coords)?;
    let mut motion_err: f64 = 0.0;
    for c in 0..3 {
        for j in 0..22 {
            let mut acc = coords.at(&[c, 0, j]);
            for t in 1..9 {
                acc += motion.at(&[c, t, j]);
                motion_err = motion_err.max((acc - coords.at(&[c, t, j])).abs());
            }
        }
    }
    Ok((
        bone_err <= 1e-12 && motion_err <= 1e-12,
        format!("bone reconstruction {bone_err:.1e}, motion prefix sum {motion_err:.1e}"),
    ))
}

fn check_checkpoint() -> Result<(bool, String)> {
    let cfg = micro_model_config();
    let (_, params, stats) = Model::new::<f32>(&cfg, 1)?;
    let ckpt = Checkpoint::capture("model.groups = 8\n".into(), 3, &params, &stats, None);
    let back = Checkpoint::<f32>::decode(&ckpt.encode())?;
    let mut p2 = params.clone();
    p2.iter_mut().for_each(|p| p.value = p.value.map(|_| 0.0));
    let mut s2 = stats.clone();
    back.restore(&mut p2, &mut s2)?;
    let same = p2.iter().zip(params.iter()).all(|(a, b)| a.value == b.value);
    Ok((back == ckpt && same, format!("{} entries round-trip", ckpt.entries.len())))
}

fn check_cam() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_tensor(&[6, 4, 5], 2.0, &mut rng);
    let w = random_tensor(&[3, 6], 1.0, &mut rng);
    let mut ok = true;
    for class in 0..3 {
        let m = cam(&f, &w, class)?;
        ok &= m.data().iter().all(|x| (0.0..=1.0).contains(x));
        let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ok &= lo == 0.0 && hi == 1.0;
    }
    Ok((ok, "normalized maps span [0, 1]".into()))
}

fn check_fusion() -> Result<(bool, String)> {
    let a = vec![vec![0.6, 0.4]];
    let b = vec![vec![0.2, 0.8]];
    let (_, labels) = fuse_scores(&[a.clone(), b.clone()], &[1.0, 1.0])?;
    let (_, scaled) = fuse_scores(&[a.clone(), b.clone()], &[3.0, 3.0])?;
    let (_, muted) = fuse_scores(&[a, b], &[1.0, 0.0])?;
    Ok((
        labels == [1] && scaled == [1] && muted == [0],
        format!("equal weights -> {labels:?}, scaled -> {scaled:?}, second muted -> {muted:?}"),
    ))
}

fn check_training_step() -> Result<(bool, String)> {
    use crate::training::Trainer;
    let mut model = micro_model_config();
    model.num_classes = 4;
    model.joints = 22;
    let train = generate_synthetic(4, 2, 22, 8, 7)?;
    let cfg = TrainConfig {
        batch_size: 8,
        frames: 8,
        warmup: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&model, cfg, train, Vec::new())?;
    let (x, labels) = t.epoch_batches(0)?.remove(0);
    let before = t.params.clone();
    t.step(x.clone(), &labels, 0.0)?;
    let frozen = t.params.iter().zip(before.iter()).all(|(a, b)| a.value == b.value);
    let mut losses = Vec::new();
    for _ in 0..6 {
        losses.push(t.step(x.clone(), &labels, 0.05)?.0);
    }
    let decreasing = losses.windows(2).take(5).all(|w| w[1] < w[0]);
    Ok((
        frozen && decreasing,
        format!(
            "lr 0 leaves parameters: {frozen}, losses {}",
            losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" ")
        ),
    ))
}

pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "gradient.primitives",
            run: check_ops,
        },
        Check {
            name: "gradient.composites",
            run: check_composites,
        },
        Check {
            name: "gradient.micro_model",
            run: check_micro_model,
        },
        Check {
            name: "oracle.reduction",
            run: check_reduction,
        },
        Check {
            name: "oracle.grouping",
            run: check_grouping,
        },
        Check {
            name: "oracle.equivariance",
            run: check_equivariance,
        },
        Check {
            name: "pooling.convexity",
            run: check_pooling,
        },
        Check {
            name: "params.group_independence",
            run: check_param_gap,
        },
        Check {
            name: "schedule.milestones",
            run: check_schedule,
        },
        Check {
            name: "data.sampling",
            run: check_sampling,
        },
        Check {
            name: "data.modalities",
            run: check_modalities,
        },
        Check {
            name: "checkpoint.round_trip",
            run: check_checkpoint,
        },
        Check {
            name: "cam.normalization",
            run: check_cam,
        },
        Check {
            name: "fusion.arithmetic",
            run: check_fusion,
        },
        Check {
            name: "training.step",
            run: check_training_step,
        },
    ]
}

/// Run the checks whose names contain `filter`, reporting each as it finishes.
pub fn run(filter: Option<&str>, mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .map(|c| {
            let start = Instant::now();
            let (passed, detail) = match (c.run)() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            let r = CheckResult {
                name: c.name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            };
            report(&r);
            r
        })
        .collect()
}
