//! Graph layer against brute-force references and hand-computed cases.

use dstsa::graph_conv::{baseline_sgcn, GraphConv, GraphConvConfig};
use dstsa::network::{Model, ModelConfig};
use dstsa::nn::Builder;
use dstsa::params::{ParamStore, RunningStats};
use dstsa::skeleton::GraphSpec;
use dstsa::tensor::Tensor;
use dstsa::topology::{StaticInit, Theta};
use dstsa::verify::oracles::{
    equivariance_oracle, grouping_oracle, layer_fixture, param_count_gap, pooling_oracle, random_tensor, reduction_oracle,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn reduced(cin: usize, cout: usize) -> GraphConvConfig {
    GraphConvConfig {
        cin,
        cout,
        groups: 1,
        theta: Theta::Tanh,
        static_init: StaticInit::Random,
        stca: false,
        gcgc: true,
        gtgc: false,
    }
}

#[test]
fn reduction_matches_direct_graph_convolution() {
    let err = reduction_oracle(20).unwrap();
    assert!(err <= 1e-12, "{err:e}");
}

#[test]
fn reduced_layer_on_a_hand_computed_case() {
    // two joints, one channel, W = 2, static graph rows [0.5 0.5], [0.25 0.75]
    let mut fx = layer_fixture(&reduced(1, 1), 2, 3).unwrap();
    let g = fx.layer.gcgc.clone().unwrap();
    fx.set(g.alpha, Tensor::scalar(0.0));
    fx.set(g.bank, Tensor::from_f64(&[1, 2, 2], &[0.5, 0.5, 0.25, 0.75]).unwrap());
    fx.set(fx.layer.a.unwrap(), Tensor::scalar(1.0));
    fx.set(fx.layer.transform.w.weight, Tensor::from_f64(&[1, 1, 1], &[2.0]).unwrap());
    let x = Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 3.0]).unwrap();
    let y = fx.forward(&x).unwrap();
    // y_j = 2 * sum_i x_i A[i, j]
    assert_eq!(y.data(), &[2.5, 5.5]);
}

#[test]
fn reduction_convention_is_sensitive_to_orientation() {
    // a non-symmetric graph distinguishes x·A from A·x; only the transpose matches
    let mut fx = layer_fixture(&reduced(2, 3), 4, 11).unwrap();
    let g = fx.layer.gcgc.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_tensor(&[4, 4], 1.0, &mut rng);
    fx.set(g.alpha, Tensor::scalar(0.0));
    fx.set(g.bank, a.reshape(&[1, 4, 4]).unwrap());
    fx.set(fx.layer.a.unwrap(), Tensor::scalar(1.0));
    let x = random_tensor(&[1, 2, 3, 4], 1.0, &mut rng);
    let y = fx.forward(&x).unwrap().reshape(&[3, 3, 4]).unwrap();
    let w = fx.params.get(fx.layer.transform.w.weight).value.reshape(&[3, 2]).unwrap().permute(&[1, 0]).unwrap();
    let xs = x.reshape(&[2, 3, 4]).unwrap();
    let transposed = baseline_sgcn(&xs, &[a.permute(&[1, 0]).unwrap()], std::slice::from_ref(&w)).unwrap();
    let direct = baseline_sgcn(&xs, &[a], &[w]).unwrap();
    assert!(y.max_abs_diff(&transposed) <= 1e-12);
    assert!(y.max_abs_diff(&direct) > 1e-3);
}

#[test]
fn grouped_layers_match_per_group_slices() {
    let err = grouping_oracle(&[2, 4, 8], 3).unwrap();
    assert!(err <= 1e-12, "{err:e}");
}

#[test]
fn library_and_reference_agree_for_every_branch_combination() {
    for (gcgc, gtgc) in [(true, false), (false, true), (true, true)] {
        for theta in [Theta::Tanh, Theta::Softmax] {
            let cfg = GraphConvConfig {
                groups: 2,
                theta,
                stca: true,
                gcgc,
                gtgc,
                ..reduced(4, 6)
            };
            let fx = layer_fixture(&cfg, 7, 2).unwrap();
            let x = random_tensor(&[2, 4, 5, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
            let err = fx.forward(&x).unwrap().max_abs_diff(&fx.reference(&x).unwrap());
            assert!(err <= 1e-12, "gcgc {gcgc} gtgc {gtgc} {theta:?}: {err:e}");
        }
    }
}

#[test]
fn dynamic_graphs_are_permutation_equivariant() {
    let (joint, frame) = equivariance_oracle(5).unwrap();
    assert!(joint <= 1e-10, "{joint:e}");
    assert!(frame <= 1e-10, "{frame:e}");
}

#[test]
fn static_bank_breaks_joint_equivariance() {
    // negative control: with a non-trivial static graph the same check must fail
    let cfg = GraphConvConfig {
        groups: 2,
        static_init: StaticInit::Random,
        ..reduced(4, 4)
    };
    let fx = layer_fixture(&cfg, 6, 1).unwrap();
    let x = random_tensor(&[1, 4, 6, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let perm = [1, 0, 2, 3, 4, 5];
    let permute = |t: &Tensor<f64>| {
        let mut out = t.clone();
        let s = t.shape().to_vec();
        for n in 0..s[0] {
            for c in 0..s[1] {
                for f in 0..s[2] {
                    for (j, &p) in perm.iter().enumerate() {
                        out.set(&[n, c, f, j], t.at(&[n, c, f, p]));
                    }
                }
            }
        }
        out
    };
    let lhs = fx.forward(&permute(&x)).unwrap();
    let rhs = permute(&fx.forward(&x).unwrap());
    assert!(lhs.max_abs_diff(&rhs) > 1e-3);
}

#[test]
fn gated_poolings_are_convex() {
    let r = pooling_oracle(20).unwrap();
    assert!(r.weight_sum_err <= 1e-6, "{r:?}");
    assert!(r.range_violation <= 1e-12, "{r:?}");
    assert!(r.reference_err <= 1e-12, "{r:?}");
}

fn layer_params(groups: usize, joints: usize) -> usize {
    let cfg = GraphConvConfig {
        groups,
        gtgc: true,
        stca: true,
        ..reduced(64, 64)
    };
    let graph = GraphSpec::for_joints(joints).unwrap();
    let mut params = ParamStore::<f64>::new();
    let mut stats = RunningStats::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = Builder {
        params: &mut params,
        stats: &mut stats,
        rng: &mut rng,
    };
    let layer = GraphConv::new(&mut b, "g", &cfg, &graph).unwrap();
    assert_eq!(layer.param_count(), params.numel());
    layer.param_count()
}

#[test]
fn group_count_only_changes_the_static_bank() {
    for v in [5, 22, 25] {
        assert_eq!(layer_params(8, v) - layer_params(4, v), 4 * v * v, "V = {v}");
        assert_eq!(layer_params(2, v) - layer_params(1, v), v * v, "V = {v}");
    }
}

#[test]
fn model_level_gap_is_one_bank_difference_per_graph_layer() {
    let cfg = ModelConfig::default();
    let (gap, layers) = param_count_gap(&cfg).unwrap();
    assert_eq!(layers, 12);
    assert_eq!(gap, (layers * 4 * 22 * 22) as i64);
    let (model, params, _) = Model::new::<f32>(&cfg, 0).unwrap();
    assert_eq!(model.param_count(), params.numel());
}
