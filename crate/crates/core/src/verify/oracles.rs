//! Plain-loop references for the graph layer and the brute-force checks
//! built on them. Nothing here calls the tensor kernels: every reference
//! value comes from explicit index arithmetic on `f64` slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph_conv::{baseline_sgcn, GraphConv, GraphConvConfig};
use crate::network::{Model, ModelConfig};
use crate::nn::{Builder, Conv1x1, Ctx};
use crate::params::{ParamId, ParamStore, RunningStats};
use crate::pooling::{cgp_weights, grouped_cgp, tgp, tgp_weights};
use crate::skeleton::GraphSpec;
use crate::tensor::Tensor;
use crate::topology::{normalize_adjacency, StaticInit, Theta, NORM_EPS};

/// One graph layer with randomized parameters in 64-bit.
pub struct LayerFixture {
    pub layer: GraphConv,
    pub params: ParamStore<f64>,
    pub stats: RunningStats<f64>,
    pub cfg: GraphConvConfig,
}

pub fn random_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("sized")
}

/// Build the layer, then redraw every parameter uniformly in `±0.8` so that
/// no term starts at a degenerate value (zero α, identical fusion weights).
pub fn layer_fixture(cfg: &GraphConvConfig, joints: usize, seed: u64) -> Result<LayerFixture> {
    let graph = GraphSpec::for_joints(joints)?;
    let mut params = ParamStore::new();
    let mut stats = RunningStats::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = {
        let mut b = Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        };
        GraphConv::new(&mut b, "g", cfg, &graph)?
    };
    let mut draw = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in params.iter_mut() {
        p.value = random_tensor(p.value.shape(), 0.8, &mut draw);
    }
    Ok(LayerFixture {
        layer,
        params,
        stats,
        cfg: cfg.clone(),
    })
}

impl LayerFixture {
    pub fn set(&mut self, id: ParamId, value: Tensor<f64>) {
        self.params.get_mut(id).value = value;
    }

    fn value(&self, id: ParamId) -> &[f64] {
        self.params.get(id).value.data()
    }

    /// Output of the library implementation.
    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let mut stats = self.stats.clone();
        let mut ctx = Ctx::new(&mut tape, &self.params, &mut stats, false);
        let xv = ctx.tape.leaf(x.clone());
        let y = self.layer.forward(&mut ctx, xv)?;
        Ok(ctx.tape.value(y).clone())
    }

    /// Output of the plain-loop reference.
    pub fn reference(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cfg.cin {
            return Err(Error::shape("reference graph conv", s, &[0, self.cfg.cin, 0, 0]));
        }
        let (n, cin, t, v) = (s[0], s[1], s[2], s[3]);
        let cout = self.cfg.cout;
        let k = self.cfg.groups;
        let theta = self.cfg.theta;
        let mut out = vec![0.0; n * cout * t * v];
        for ni in 0..n {
            let xs = &x.data()[ni * cin * t * v..(ni + 1) * cin * t * v];
            let gated = match &self.layer.transform.stca {
                Some(stca) => self.stca_reference(stca, xs, cin, t, v),
                None => xs.to_vec(),
            };
            let xhat = conv1x1(self.value(self.layer.transform.w.weight), None, &gated, cin, cout, t * v);
            let o = &mut out[ni * cout * t * v..(ni + 1) * cout * t * v];
            if let (Some(g), Some(a)) = (&self.layer.gcgc, self.layer.a) {
                let a = self.value(a)[0];
                let alpha = self.value(g.alpha)[0];
                let bank = self.value(g.bank);
                let pooled = tgp_reference(xs, cin, t, v);
                let u = conv1x1_layer(self, &g.phi1, &pooled, cin, cout, v);
                let w = conv1x1_layer(self, &g.phi2, &pooled, cin, cout, v);
                for c in 0..cout {
                    let grp = c / (cout / k);
                    let mut diff = vec![0.0; v * v];
                    for i in 0..v {
                        for j in 0..v {
                            diff[i * v + j] = u[c * v + i] - w[c * v + j];
                        }
                    }
                    let dyn_graph = theta_rows(theta, &diff, v);
                    for ti in 0..t {
                        for j in 0..v {
                            let mut acc = 0.0;
                            for i in 0..v {
                                let edge = alpha * dyn_graph[i * v + j] + bank[(grp * v + i) * v + j];
                                acc += xhat[(c * t + ti) * v + i] * edge;
                            }
                            o[(c * t + ti) * v + j] += a * acc;
                        }
                    }
                }
            }
            if let (Some(g), Some(b)) = (&self.layer.gtgc, self.layer.b) {
                let b = self.value(b)[0];
                let phi3 = self.value(g.phi3)[0];
                let per_in = cin / k;
                for grp in 0..k {
                    // channel-gated pooling of this group's input slice alone
                    let slice = &xs[grp * per_in * t * v..(grp + 1) * per_in * t * v];
                    let m = cgp_reference(slice, per_in, t, v);
                    for ti in 0..t {
                        let mut diff = vec![0.0; v * v];
                        for i in 0..v {
                            for j in 0..v {
                                diff[i * v + j] = phi3 * m[ti * v + i] - phi3 * m[ti * v + j];
                            }
                        }
                        let graph = theta_rows(theta, &diff, v);
                        let per_out = cout / k;
                        for c in grp * per_out..(grp + 1) * per_out {
                            for j in 0..v {
                                let acc: f64 = (0..v).map(|i| xhat[(c * t + ti) * v + i] * graph[i * v + j]).sum();
                                o[(c * t + ti) * v + j] += b * acc;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(&[n, cout, t, v], out)
    }

    fn stca_reference(&self, stca: &crate::pooling::Stca, xs: &[f64], c: usize, t: usize, v: usize) -> Vec<f64> {
        // frame profile then joint profile along one axis of length T + V
        let mut joined = vec![0.0; c * (t + v)];
        for ci in 0..c {
            for ti in 0..t {
                joined[ci * (t + v) + ti] = (0..v).map(|j| xs[(ci * t + ti) * v + j]).sum::<f64>() / v as f64;
            }
            for j in 0..v {
                joined[ci * (t + v) + t + j] = (0..t).map(|ti| xs[(ci * t + ti) * v + j]).sum::<f64>() / t as f64;
            }
        }
        let h = stca.hidden;
        let reduced: Vec<f64> = conv1x1_layer(self, &stca.reduce, &joined, c, h, t + v)
            .into_iter()
            .map(|z| z * (z + 3.0).clamp(0.0, 6.0) / 6.0)
            .collect();
        let mut jt = vec![0.0; h * t];
        let mut jv = vec![0.0; h * v];
        for hi in 0..h {
            jt[hi * t..(hi + 1) * t].copy_from_slice(&reduced[hi * (t + v)..hi * (t + v) + t]);
            jv[hi * v..(hi + 1) * v].copy_from_slice(&reduced[hi * (t + v) + t..(hi + 1) * (t + v)]);
        }
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let gt: Vec<f64> = conv1x1_layer(self, &stca.temporal, &jt, h, c, t).into_iter().map(sig).collect();
        let gv: Vec<f64> = conv1x1_layer(self, &stca.spatial, &jv, h, c, v).into_iter().map(sig).collect();
        let mut out = xs.to_vec();
        for ci in 0..c {
            for ti in 0..t {
                for j in 0..v {
                    out[(ci * t + ti) * v + j] *= gt[ci * t + ti] * gv[ci * v + j];
                }
            }
        }
        out
    }
}

/// `y[co, p] = sum_ci w[co, ci] x[ci, p] + bias[co]`.
fn conv1x1(w: &[f64], bias: Option<&[f64]>, x: &[f64], cin: usize, cout: usize, positions: usize) -> Vec<f64> {
    let mut y = vec![0.0; cout * positions];
    for co in 0..cout {
        for p in 0..positions {
            let mut acc = bias.map_or(0.0, |b| b[co]);
            for ci in 0..cin {
                acc += w[co * cin + ci] * x[ci * positions + p];
            }
            y[co * positions + p] = acc;
        }
    }
    y
}

fn conv1x1_layer(fx: &LayerFixture, layer: &Conv1x1, x: &[f64], cin: usize, cout: usize, positions: usize) -> Vec<f64> {
    conv1x1(fx.value(layer.weight), layer.bias.map(|b| fx.value(b)), x, cin, cout, positions)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Apply θ to a `V x V` matrix; softmax normalizes each row.
fn theta_rows(theta: Theta, d: &[f64], v: usize) -> Vec<f64> {
    match theta {
        Theta::Tanh => d.iter().map(|x| x.tanh()).collect(),
        Theta::Relu => d.iter().map(|x| x.max(0.0)).collect(),
        Theta::Sigmoid => d.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        Theta::Softmax => d.chunks(v).flat_map(softmax).collect(),
    }
}

/// Temporal-gated pooling of one sample `(C, T, V)`: `(C, V)`.
pub fn tgp_reference(x: &[f64], c: usize, t: usize, v: usize) -> Vec<f64> {
    let scores: Vec<f64> = (0..t)
        .map(|ti| {
            let mut s = 0.0;
            for ci in 0..c {
                for j in 0..v {
                    s += x[(ci * t + ti) * v + j];
                }
            }
            s / (c * v) as f64
        })
        .collect();
    let w = softmax(&scores);
    let mut out = vec![0.0; c * v];
    for ci in 0..c {
        for j in 0..v {
            out[ci * v + j] = (0..t).map(|ti| w[ti] * x[(ci * t + ti) * v + j]).sum();
        }
    }
    out
}

/// Channel-gated pooling of one sample `(C, T, V)`: `(T, V)`.
pub fn cgp_reference(x: &[f64], c: usize, t: usize, v: usize) -> Vec<f64> {
    let plane = t * v;
    let scores: Vec<f64> = (0..c)
        .map(|ci| x[ci * plane..(ci + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    let w = softmax(&scores);
    let mut out = vec![0.0; plane];
    for ci in 0..c {
        for p in 0..plane {
            out[p] += w[ci] * x[ci * plane + p];
        }
    }
    out
}

fn random_adjacency(v: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut a = vec![0.0; v * v];
    for i in 0..v {
        a[i * v + i] = 1.0;
        for j in i + 1..v {
            if rng.random_bool(0.4) {
                let w = rng.random_range(0.2..1.0);
                a[i * v + j] = w;
                a[j * v + i] = w;
            }
        }
    }
    Tensor::new(&[v, v], a).expect("square")
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("oracle comparison", a.shape(), b.shape()));
    }
    Ok(a.max_abs_diff(b))
}

/// Worst deviation between the reduced layer (K = 1, α = 0, no STCA, static
/// branch only) and the direct spatial graph convolution, over `instances`
/// random inputs, graphs and weights.
pub fn reduction_oracle(instances: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (cin, cout, t, v) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..8));
        let cfg = GraphConvConfig {
            cin,
            cout,
            groups: 1,
            theta: Theta::Tanh,
            static_init: StaticInit::Random,
            stca: false,
            gcgc: true,
            gtgc: false,
        };
        let mut fx = layer_fixture(&cfg, v, seed)?;
        let norm = normalize_adjacency(&random_adjacency(v, &mut rng), NORM_EPS)?;
        let g = fx.layer.gcgc.clone().expect("enabled");
        fx.set(g.alpha, Tensor::scalar(0.0));
        fx.set(g.bank, norm.reshape(&[1, v, v])?);
        fx.set(fx.layer.a.expect("enabled"), Tensor::scalar(1.0));
        let x = random_tensor(&[2, cin, t, v], 1.0, &mut rng);
        let y = fx.forward(&x)?;
        let w = fx.params.get(fx.layer.transform.w.weight).value.reshape(&[cout, cin])?.permute(&[1, 0])?;
        // the layer aggregates x·A, the baseline Ã·x: pass the transpose
        let partition = norm.permute(&[1, 0])?;
        for ni in 0..2 {
            let xs = x.narrow(0, ni, 1)?.reshape(&[cin, t, v])?;
            let base = baseline_sgcn(&xs, std::slice::from_ref(&partition), std::slice::from_ref(&w))?;
            let ys = y.narrow(0, ni, 1)?.reshape(&[cout, t, v])?;
            worst = worst.max(max_abs_diff(&ys, &base)?);
        }
    }
    Ok(worst)
}

/// Worst deviation between the grouped layer and the per-group reference,
/// for every `K` in `groups`, each θ, STCA on and off.
pub fn grouping_oracle(groups: &[usize], seeds: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &k in groups {
        for seed in 0..seeds {
            for (ti, theta) in [Theta::Tanh, Theta::Softmax, Theta::Sigmoid, Theta::Relu].into_iter().enumerate() {
                let cfg = GraphConvConfig {
                    cin: 2 * k,
                    cout: 3 * k,
                    groups: k,
                    theta,
                    static_init: StaticInit::Random,
                    stca: (seed + ti as u64).is_multiple_of(2),
                    gcgc: true,
                    gtgc: true,
                };
                let fx = layer_fixture(&cfg, 5, seed * 31 + k as u64)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
                let x = random_tensor(&[2, cfg.cin, 4, 5], 1.0, &mut rng);
                worst = worst.max(max_abs_diff(&fx.forward(&x)?, &fx.reference(&x)?)?);
            }
        }
    }
    Ok(worst)
}

fn permute_axis(x: &Tensor<f64>, axis: usize, perm: &[usize]) -> Result<Tensor<f64>> {
    let parts = perm
        .iter()
        .map(|&p| x.narrow(axis, p, 1))
        .collect::<Result<Vec<_>>>()?;
    let mut shape = x.shape().to_vec();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(x.numel());
    for o in 0..outer {
        for part in &parts {
            out.extend_from_slice(&part.data()[o * inner..(o + 1) * inner]);
        }
    }
    shape[axis] = perm.len();
    Tensor::new(&shape, out)
}

/// `(joint error of dynamic-only GC-GC, frame error of GT-GC)`: how far
/// `f(permute(x))` is from `permute(f(x))` at V = T = 6.
pub fn equivariance_oracle(seeds: u64) -> Result<(f64, f64)> {
    let (v, t) = (6, 6);
    let (mut joint_err, mut frame_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let mut perm: Vec<usize> = (0..6).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let base = GraphConvConfig {
            cin: 4,
            cout: 4,
            groups: 2,
            theta: Theta::Tanh,
            static_init: StaticInit::Random,
            stca: false,
            gcgc: true,
            gtgc: false,
        };
        let x = random_tensor(&[2, 4, t, v], 1.0, &mut rng);

        let mut gc = layer_fixture(&base, v, seed)?;
        let bank = gc.layer.gcgc.as_ref().expect("enabled").bank;
        gc.set(bank, Tensor::zeros(&[2, v, v]));
        let lhs = gc.forward(&permute_axis(&x, 3, &perm)?)?;
        let rhs = permute_axis(&gc.forward(&x)?, 3, &perm)?;
        joint_err = joint_err.max(max_abs_diff(&lhs, &rhs)?);

        let gt_cfg = GraphConvConfig {
            gcgc: false,
            gtgc: true,
            ..base
        };
        let gt = layer_fixture(&gt_cfg, v, seed)?;
        let lhs = gt.forward(&permute_axis(&x, 2, &perm)?)?;
        let rhs = permute_axis(&gt.forward(&x)?, 2, &perm)?;
        frame_err = frame_err.max(max_abs_diff(&lhs, &rhs)?);
    }
    Ok((joint_err, frame_err))
}

/// Pooling convexity on random inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct PoolingReport {
    /// Largest `|sum(weights) - 1|` over TGP, CGP and grouped CGP.
    pub weight_sum_err: f64,
    /// Largest amount a TGP output leaves its per-(c, v) frame range.
    pub range_violation: f64,
    /// Largest deviation of the library poolings from the loop references.
    pub reference_err: f64,
}

pub fn pooling_oracle(seeds: u64) -> Result<PoolingReport> {
    let mut rep = PoolingReport::default();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 900);
        let (n, c, t, v) = (2, 4 * rng.random_range(1..4), rng.random_range(1..9), rng.random_range(1..7));
        // wide inputs push the softmax toward one-hot weights
        let x = random_tensor(&[n, c, t, v], 5.0, &mut rng);
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone());
        let tw = tgp_weights(&mut tape, xv)?;
        let cw = cgp_weights(&mut tape, xv)?;
        let pooled = tgp(&mut tape, xv)?;
        let grouped = grouped_cgp(&mut tape, xv, 4)?;
        for (weights, len) in [(tape.value(tw), t), (tape.value(cw), c)] {
            for row in weights.data().chunks(len) {
                rep.weight_sum_err = rep.weight_sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let p = tape.value(pooled).data();
        let g = tape.value(grouped).data();
        for ni in 0..n {
            let xs = &x.data()[ni * c * t * v..(ni + 1) * c * t * v];
            let reference = tgp_reference(xs, c, t, v);
            for ci in 0..c {
                for j in 0..v {
                    let frames = (0..t).map(|ti| xs[(ci * t + ti) * v + j]);
                    let lo = frames.clone().fold(f64::INFINITY, f64::min);
                    let hi = frames.fold(f64::NEG_INFINITY, f64::max);
                    let y = p[(ni * c + ci) * v + j];
                    rep.range_violation = rep.range_violation.max(lo - y).max(y - hi);
                    rep.reference_err = rep.reference_err.max((y - reference[ci * v + j]).abs());
                }
            }
            let per = c / 4;
            for grp in 0..4 {
                let slice = &xs[grp * per * t * v..(grp + 1) * per * t * v];
                let reference = cgp_reference(slice, per, t, v);
                let got = &g[(ni * 4 + grp) * t * v..(ni * 4 + grp + 1) * t * v];
                for (a, b) in got.iter().zip(&reference) {
                    rep.reference_err = rep.reference_err.max((a - b).abs());
                }
            }
        }
    }
    Ok(rep)
}

/// `(count(K=8) - count(K=4), graph layers)` for a configuration.
pub fn param_count_gap(cfg: &ModelConfig) -> Result<(i64, usize)> {
    let count = |k: usize| -> Result<i64> {
        let c = ModelConfig { groups: k, ..cfg.clone() };
        let (model, _, _) = Model::new::<f32>(&c, 0)?;
        Ok(model.param_count() as i64)
    };
    let layers = cfg.block_plan().len();
    Ok((count(8)? - count(4)?, layers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_theta_normalizes_rows() {
        let g = theta_rows(Theta::Softmax, &[0.0, 0.0, 1.0, 1.0], 2);
        assert_eq!(g, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn permute_axis_moves_slices() {
        let x = Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(permute_axis(&x, 1, &[2, 0, 1]).unwrap().data(), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn pooling_references_on_constant_input() {
        let x = vec![2.0; 2 * 3 * 4];
        assert!(tgp_reference(&x, 2, 3, 4).iter().all(|&y| (y - 2.0).abs() < 1e-15));
        assert!(cgp_reference(&x, 2, 3, 4).iter().all(|&y| (y - 2.0).abs() < 1e-15));
    }
}
