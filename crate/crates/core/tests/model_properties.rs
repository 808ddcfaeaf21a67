//! Shape, determinism and bookkeeping properties of the full network.

use dstsa::autodiff::Tape;
use dstsa::network::{count_params_flops, Model, ModelConfig};
use dstsa::nn::Ctx;
use dstsa::params::{ParamStore, RunningStats};
use dstsa::tensor::Tensor;
use dstsa::verify::oracles::random_tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(frames: usize) -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        stage_depths: vec![1, 1, 1],
        num_classes: 5,
        joints: 7,
        input_frames: frames,
        ..ModelConfig::default()
    }
}

fn logits(model: &Model, params: &ParamStore<f64>, stats: &RunningStats<f64>, x: &Tensor<f64>) -> (Tensor<f64>, Vec<usize>) {
    let mut tape = Tape::new();
    let mut st = stats.clone();
    let mut ctx = Ctx::new(&mut tape, params, &mut st, false);
    let xv = ctx.tape.constant(x.clone());
    let out = model.forward(&mut ctx, xv).unwrap();
    let feature_shape = ctx.tape.shape(out.features).to_vec();
    (ctx.tape.value(out.logits).clone(), feature_shape)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_shapes_follow_the_strides(frames in 4usize..24, n in 1usize..3) {
        let cfg = small(frames);
        let (model, params, stats) = Model::new::<f64>(&cfg, 1).unwrap();
        let x = random_tensor(&[n, 3, frames, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(frames as u64));
        let (y, features) = logits(&model, &params, &stats, &x);
        prop_assert_eq!(y.shape(), &[n, 5]);
        // two stride-2 stages
        let t_out = frames.div_ceil(2).div_ceil(2);
        prop_assert_eq!(features, vec![n, 32, t_out, 7]);
        prop_assert_eq!(model.output_frames(frames).unwrap(), t_out);
        prop_assert!(y.is_finite());
    }
}

#[test]
fn eval_mode_scores_do_not_depend_on_the_batch() {
    let cfg = small(12);
    let (model, params, stats) = Model::new::<f64>(&cfg, 2).unwrap();
    let x = random_tensor(&[3, 3, 12, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let (all, _) = logits(&model, &params, &stats, &x);
    for i in 0..3 {
        let (one, _) = logits(&model, &params, &stats, &x.narrow(0, i, 1).unwrap());
        assert!(one.max_abs_diff(&all.narrow(0, i, 1).unwrap()) < 1e-12);
    }
}

#[test]
fn construction_is_deterministic_per_seed() {
    let cfg = small(8);
    let (_, a, _) = Model::new::<f32>(&cfg, 9).unwrap();
    let (_, b, _) = Model::new::<f32>(&cfg, 9).unwrap();
    let (_, c, _) = Model::new::<f32>(&cfg, 10).unwrap();
    let same = a.iter().zip(b.iter()).all(|(p, q)| p.name == q.name && p.value.data() == q.value.data());
    let differs = a.iter().zip(c.iter()).any(|(p, q)| p.value.data() != q.value.data());
    assert!(same && differs);
}

#[test]
fn default_model_size_and_block_layout() {
    let cfg = ModelConfig::default();
    let (model, params, _) = Model::new::<f32>(&cfg, 0).unwrap();
    assert_eq!(model.blocks.len(), 12);
    assert_eq!(model.param_count(), params.numel());
    assert_eq!(model.layer_names().first().map(String::as_str), Some("blocks.0"));
    let (count, flops) = count_params_flops(&cfg).unwrap();
    assert_eq!(count, params.numel());
    assert!(flops > 0);
    // a few hundred thousand to a few million parameters for three 64/128/256 stages
    assert!((500_000..5_000_000).contains(&count), "{count}");
}

#[test]
fn disabling_components_shrinks_the_model() {
    let base = small(8);
    let full = count_params_flops(&base).unwrap().0;
    let variants = [
        ModelConfig { gcgc: false, ..base.clone() },
        ModelConfig { gtgc: false, ..base.clone() },
        ModelConfig { stca: false, ..base.clone() },
    ];
    for v in variants {
        let n = count_params_flops(&v).unwrap().0;
        assert!(n < full, "{v:?}: {n} >= {full}");
    }
}

#[test]
fn joint_mismatch_is_reported() {
    let cfg = small(8);
    let (model, params, stats) = Model::new::<f64>(&cfg, 0).unwrap();
    let mut tape = Tape::new();
    let mut st = stats.clone();
    let mut ctx = Ctx::new(&mut tape, &params, &mut st, false);
    let x = ctx.tape.constant(Tensor::zeros(&[1, 3, 8, 6]));
    assert!(model.forward(&mut ctx, x).is_err());
}
