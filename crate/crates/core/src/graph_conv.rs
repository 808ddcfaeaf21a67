//! Grouped channel-wise (GC-GC) and temporal-wise (GT-GC) graph convolutions.
//!
//! Both branches consume the same transformed features `x̂ = W · STCA(x)`
//! and differ only in the graphs they aggregate with:
//!
//! * GC-GC: one `V x V` graph per channel, `α·A_c + A[group]`, shared over frames.
//! * GT-GC: one `V x V` graph per (group, frame), shared over the group's channels.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv1x1, Ctx};
use crate::params::ParamId;
use crate::pooling::{grouped_cgp, tgp, Stca};
use crate::skeleton::GraphSpec;
use crate::tensor::{Scalar, Tensor};
use crate::topology::{dynamic_channel_topology, dynamic_temporal_topology, fuse_topology, init_static, StaticInit, Theta};

/// Scalar fusion weights at initialization.
pub const ALPHA_INIT: f64 = 0.0;
pub const FUSION_INIT: f64 = 0.5;
pub const STCA_REDUCTION: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConvConfig {
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub theta: Theta,
    pub static_init: StaticInit,
    pub stca: bool,
    pub gcgc: bool,
    pub gtgc: bool,
}

/// `x̂ = W · STCA(x)`, shared by both branches.
#[derive(Clone, Debug)]
pub struct FeatureTransform {
    pub stca: Option<Stca>,
    pub w: Conv1x1,
}

impl FeatureTransform {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cin: usize, cout: usize, stca: bool) -> Result<Self> {
        Ok(Self {
            stca: if stca {
                Some(Stca::new(b, &format!("{name}.stca"), cin, STCA_REDUCTION)?)
            } else {
                None
            },
            w: Conv1x1::new(b, &format!("{name}.w"), cin, cout, false, 1)?,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let gated = match &self.stca {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        self.w.forward(ctx, gated)
    }

    pub fn param_count(&self) -> usize {
        self.stca.as_ref().map_or(0, Stca::param_count) + self.w.param_count()
    }

    pub fn flops(&self, t: usize, v: usize) -> usize {
        self.stca.as_ref().map_or(0, |s| s.flops(t, v)) + self.w.flops(t * v)
    }
}

#[derive(Clone, Debug)]
pub struct Gcgc {
    pub phi1: Conv1x1,
    pub phi2: Conv1x1,
    /// Static bank `(K, V, V)`.
    pub bank: ParamId,
    pub alpha: ParamId,
    pub groups: usize,
    pub joints: usize,
    pub theta: Theta,
}

impl Gcgc {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cfg: &GraphConvConfig, graph: &GraphSpec) -> Result<Self> {
        let seed = b.rng.random::<u64>();
        let bank = init_static(cfg.static_init, graph, cfg.groups, seed)?.cast();
        Ok(Self {
            phi1: Conv1x1::new(b, &format!("{name}.phi1"), cfg.cin, cfg.cout, true, 1)?,
            phi2: Conv1x1::new(b, &format!("{name}.phi2"), cfg.cin, cfg.cout, true, 1)?,
            bank: b.tensor(&format!("{name}.static"), bank, true)?,
            alpha: b.scalar(&format!("{name}.alpha"), ALPHA_INIT)?,
            groups: cfg.groups,
            joints: graph.joint_count(),
            theta: cfg.theta,
        })
    }

    /// Fused per-channel graphs `Â: (N, C_out, V, V)` for input `x`.
    pub fn topology<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x).to_vec();
        let (n, v) = (s[0], s[3]);
        let pooled = tgp(ctx.tape, x)?;
        let pooled = ctx.tape.reshape(pooled, &[n, s[1], v, 1])?;
        let u = self.phi1.forward(ctx, pooled)?;
        let w = self.phi2.forward(ctx, pooled)?;
        let cout = self.phi1.cout;
        let u = ctx.tape.reshape(u, &[n, cout, v])?;
        let w = ctx.tape.reshape(w, &[n, cout, v])?;
        let a_c = dynamic_channel_topology(ctx.tape, u, w, self.theta)?;
        let alpha = ctx.param(self.alpha);
        let bank = ctx.param(self.bank);
        fuse_topology(ctx.tape, a_c, alpha, bank)
    }

    /// Aggregate `x̂: (N, C_out, T, V)` with the graphs built from `x`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var, xhat: Var) -> Result<Var> {
        let a_hat = self.topology(ctx, x)?;
        ctx.tape.matmul(xhat, a_hat)
    }

    pub fn param_count(&self) -> usize {
        self.phi1.param_count() + self.phi2.param_count() + self.groups * self.joints * self.joints + 1
    }

    pub fn flops(&self, t: usize, v: usize) -> usize {
        let c = self.phi1.cout;
        self.phi1.cin * t * v + 2 * self.phi1.flops(v) + c * v * v + c * t * v * v
    }
}

/// Temporal-wise branch. Channel-gated pooling runs inside each of the K
/// channel groups of `x`, and a shared scalar `Phi3` maps each pooled map,
/// so the branch's parameter count does not depend on K.
#[derive(Clone, Debug)]
pub struct Gtgc {
    pub phi3: ParamId,
    pub groups: usize,
    pub theta: Theta,
}

pub const PHI3_INIT: f64 = 1.0;

impl Gtgc {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cfg: &GraphConvConfig) -> Result<Self> {
        if !cfg.cin.is_multiple_of(cfg.groups) {
            return Err(Error::Config(format!(
                "{} input channels do not split into {} groups",
                cfg.cin, cfg.groups
            )));
        }
        Ok(Self {
            phi3: b.tensor(&format!("{name}.phi3"), Tensor::scalar(F::of(PHI3_INIT)), true)?,
            groups: cfg.groups,
            theta: cfg.theta,
        })
    }

    /// Per-group, per-frame graphs `A_t: (N, K, T, V, V)` built from `x`.
    pub fn topology<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let m = grouped_cgp(ctx.tape, x, self.groups)?;
        let phi3 = ctx.param(self.phi3);
        let z = ctx.tape.mul(m, phi3)?;
        dynamic_temporal_topology(ctx.tape, z, self.theta)
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var, xhat: Var) -> Result<Var> {
        let a_t = self.topology(ctx, x)?;
        aggregate_temporal(ctx, xhat, a_t)
    }

    pub fn param_count(&self) -> usize {
        1
    }

    pub fn flops(&self, cin: usize, cout: usize, t: usize, v: usize) -> usize {
        cin * t * v + self.groups * t * v * v + cout * t * v * v
    }
}

/// `out[c, t] = x̂[c, t] · A_t[group(c), t]` for `x̂: (N, C, T, V)`, `A_t: (N, K, T, V, V)`.
pub fn aggregate_temporal<F: Scalar>(ctx: &mut Ctx<F>, xhat: Var, a_t: Var) -> Result<Var> {
    let s = ctx.tape.shape(xhat).to_vec();
    let k = ctx.tape.shape(a_t)[1];
    let (n, c, t, v) = (s[0], s[1], s[2], s[3]);
    if c % k != 0 {
        return Err(Error::Config(format!("{c} channels do not split into {k} groups")));
    }
    let g = ctx.tape.reshape(xhat, &[n, k, c / k, t, v])?;
    let g = ctx.tape.permute(g, &[0, 1, 3, 2, 4])?;
    let y = ctx.tape.matmul(g, a_t)?;
    let y = ctx.tape.permute(y, &[0, 1, 3, 2, 4])?;
    ctx.tape.reshape(y, &[n, c, t, v])
}

/// `a · gc + b · gt`.
pub fn fuse<F: Scalar>(ctx: &mut Ctx<F>, gc: Var, gt: Var, a: Var, b: Var) -> Result<Var> {
    let x = ctx.tape.mul(gc, a)?;
    let y = ctx.tape.mul(gt, b)?;
    ctx.tape.add(x, y)
}

/// GC-GC and GT-GC in parallel, fused by learned scalars.
#[derive(Clone, Debug)]
pub struct GraphConv {
    pub transform: FeatureTransform,
    pub gcgc: Option<Gcgc>,
    pub gtgc: Option<Gtgc>,
    pub a: Option<ParamId>,
    pub b: Option<ParamId>,
    pub cfg: GraphConvConfig,
}

impl GraphConv {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cfg: &GraphConvConfig, graph: &GraphSpec) -> Result<Self> {
        if !cfg.gcgc && !cfg.gtgc {
            return Err(Error::Config("at least one of GC-GC and GT-GC must be enabled".into()));
        }
        if cfg.groups == 0 || !cfg.cout.is_multiple_of(cfg.groups) {
            return Err(Error::Config(format!(
                "{} output channels do not split into {} groups",
                cfg.cout, cfg.groups
            )));
        }
        let transform = FeatureTransform::new(b, &format!("{name}.transform"), cfg.cin, cfg.cout, cfg.stca)?;
        let gcgc = cfg.gcgc.then(|| Gcgc::new(b, &format!("{name}.gcgc"), cfg, graph)).transpose()?;
        let gtgc = cfg.gtgc.then(|| Gtgc::new(b, &format!("{name}.gtgc"), cfg)).transpose()?;
        let a = cfg.gcgc.then(|| b.scalar(&format!("{name}.a"), FUSION_INIT)).transpose()?;
        let bb = cfg.gtgc.then(|| b.scalar(&format!("{name}.b"), FUSION_INIT)).transpose()?;
        Ok(Self {
            transform,
            gcgc,
            gtgc,
            a,
            b: bb,
            cfg: cfg.clone(),
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let xhat = self.transform.forward(ctx, x)?;
        let mut out = None;
        for (branch, scale) in [(0, self.a), (1, self.b)] {
            let Some(scale) = scale else { continue };
            let y = if branch == 0 {
                self.gcgc.as_ref().expect("paired with a").forward(ctx, x, xhat)?
            } else {
                self.gtgc.as_ref().expect("paired with b").forward(ctx, x, xhat)?
            };
            let s = ctx.param(scale);
            let y = ctx.tape.mul(y, s)?;
            out = Some(match out {
                Some(acc) => ctx.tape.add(acc, y)?,
                None => y,
            });
        }
        Ok(out.expect("one branch is enabled"))
    }

    pub fn param_count(&self) -> usize {
        self.transform.param_count()
            + self.gcgc.as_ref().map_or(0, Gcgc::param_count)
            + self.gtgc.as_ref().map_or(0, Gtgc::param_count)
            + self.a.map_or(0, |_| 1)
            + self.b.map_or(0, |_| 1)
    }

    pub fn flops(&self, t: usize, v: usize) -> usize {
        self.transform.flops(t, v)
            + self.gcgc.as_ref().map_or(0, |g| g.flops(t, v))
            + self.gtgc.as_ref().map_or(0, |g| g.flops(self.cfg.cin, self.cfg.cout, t, v))
    }
}

/// Direct spatial graph convolution, `sum_p Ã_p Xᵀ W_p` per frame, on plain
/// arrays. `x: (C, T, V)`, partitions `(V, V)`, weights `(C, C')`; returns `(C', T, V)`.
pub fn baseline_sgcn(x: &Tensor<f64>, partitions: &[Tensor<f64>], weights: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let s = x.shape();
    if s.len() != 3 || partitions.len() != weights.len() {
        return Err(Error::shape("baseline_sgcn", s, &[partitions.len(), weights.len()]));
    }
    let (c, t, v) = (s[0], s[1], s[2]);
    let cout = weights.first().map_or(0, |w| w.shape()[1]);
    let mut out = vec![0.0; cout * t * v];
    for (a, w) in partitions.iter().zip(weights) {
        if a.shape() != [v, v] || w.shape() != [c, cout] {
            return Err(Error::shape("baseline_sgcn", a.shape(), w.shape()));
        }
        for ti in 0..t {
            // XᵀW: (V, C')
            let mut xw = vec![0.0; v * cout];
            for i in 0..v {
                for co in 0..cout {
                    xw[i * cout + co] = (0..c).map(|ci| x.at(&[ci, ti, i]) * w.at(&[ci, co])).sum();
                }
            }
            for j in 0..v {
                for co in 0..cout {
                    let acc: f64 = (0..v).map(|i| a.at(&[j, i]) * xw[i * cout + co]).sum();
                    out[(co * t + ti) * v + j] += acc;
                }
            }
        }
    }
    Tensor::new(&[cout, t, v], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::params::{ParamStore, RunningStats};

    #[test]
    fn permutation_graph_swaps_joints() {
        let mut tape = Tape::<f64>::new();
        let params = ParamStore::new();
        let mut stats = RunningStats::new();
        let ctx = Ctx::new(&mut tape, &params, &mut stats, false);
        let xhat = ctx.tape.leaf(Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 2.0]).unwrap());
        let a = ctx.tape.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = ctx.tape.matmul(xhat, a).unwrap();
        assert_eq!(ctx.tape.value(y).data(), &[2.0, 1.0]);
    }

    #[test]
    fn fusion_limits() {
        let mut tape = Tape::<f64>::new();
        let params = ParamStore::new();
        let mut stats = RunningStats::new();
        let mut ctx = Ctx::new(&mut tape, &params, &mut stats, false);
        let gc = ctx.tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let gt = ctx.tape.leaf(Tensor::from_f64(&[2], &[5.0, -1.0]).unwrap());
        let mut check = |a: f64, b: f64, expect: [f64; 2]| {
            let av = ctx.tape.leaf(Tensor::scalar(a));
            let bv = ctx.tape.leaf(Tensor::scalar(b));
            let y = fuse(&mut ctx, gc, gt, av, bv).unwrap();
            assert_eq!(ctx.tape.value(y).data(), &expect);
        };
        check(1.0, 0.0, [1.0, 2.0]);
        check(0.0, 1.0, [5.0, -1.0]);
        check(0.5, 0.5, [3.0, 0.5]);
    }

    #[test]
    fn baseline_identity() {
        let x = Tensor::from_f64(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = baseline_sgcn(&x, &[Tensor::eye(3)], &[Tensor::eye(2)]).unwrap();
        assert_eq!(y, x);
    }
}
