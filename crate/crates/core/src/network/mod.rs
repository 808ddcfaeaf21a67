//! Block assembly, the three-stage model, class activation maps and
//! checkpoints.

mod cam;
pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph_conv::{GraphConv, GraphConvConfig};
use crate::mstcn::{BranchSet, MsTcn};
use crate::nn::{BatchNorm, Builder, Conv1x1, Ctx, Linear};
use crate::params::{ParamStore, RunningStats};
use crate::skeleton::GraphSpec;
use crate::tensor::Scalar;
use crate::topology::{StaticInit, Theta};

pub use cam::{cam, cam_raw, normalize_map};
pub use checkpoint::Checkpoint;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Blocks per stage; stage `i` runs at `base_channels << i`.
    pub stage_depths: Vec<usize>,
    pub groups: usize,
    pub theta: Theta,
    pub branches: BranchSet,
    pub static_init: StaticInit,
    pub stca: bool,
    pub gcgc: bool,
    pub gtgc: bool,
    pub num_classes: usize,
    pub joints: usize,
    /// Frames per sample; used for FLOP accounting.
    pub input_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 64,
            stage_depths: vec![5, 3, 2],
            groups: 8,
            theta: Theta::Tanh,
            branches: BranchSet::default_set(),
            static_init: StaticInit::Random,
            stca: true,
            gcgc: true,
            gtgc: true,
            num_classes: 14,
            joints: 22,
            input_frames: 150,
        }
    }
}

impl ModelConfig {
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.stage_depths.len()).map(|i| self.base_channels << i).collect()
    }

    /// `(cin, cout, stride)` of every block, downsample blocks included.
    pub fn block_plan(&self) -> Vec<(usize, usize, usize)> {
        let widths = self.stage_channels();
        let mut plan = Vec::new();
        for (s, &depth) in self.stage_depths.iter().enumerate() {
            plan.extend(std::iter::repeat_n((widths[s], widths[s], 1), depth));
            if s + 1 < widths.len() {
                plan.push((widths[s], widths[s + 1], 2));
            }
        }
        plan
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.is_empty() || self.stage_depths.contains(&0) {
            return Err(Error::Config(format!("stage depths must be positive: {:?}", self.stage_depths)));
        }
        if self.num_classes < 2 || self.joints < 2 || self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("classes, joints and channels must be positive (classes, joints >= 2)".into()));
        }
        for c in self.stage_channels() {
            if self.groups == 0 || c % self.groups != 0 {
                return Err(Error::Config(format!("{c} channels do not split into K={} groups", self.groups)));
            }
            self.branches.widths(c)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Residual {
    Identity,
    Project(Conv1x1, BatchNorm),
}

/// `relu(bn(mstcn(relu(bn(a·GC-GC(x) + b·GT-GC(x)))))) + residual(x)`.
#[derive(Clone, Debug)]
pub struct Block {
    pub graph: GraphConv,
    gc_bn: BatchNorm,
    pub tcn: MsTcn,
    tcn_bn: BatchNorm,
    residual: Residual,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl Block {
    pub fn new<F: Scalar>(
        b: &mut Builder<F>,
        name: &str,
        cfg: &ModelConfig,
        graph: &GraphSpec,
        (cin, cout, stride): (usize, usize, usize),
    ) -> Result<Self> {
        let gcfg = GraphConvConfig {
            cin,
            cout,
            groups: cfg.groups,
            theta: cfg.theta,
            static_init: cfg.static_init,
            stca: cfg.stca,
            gcgc: cfg.gcgc,
            gtgc: cfg.gtgc,
        };
        let residual = if cin == cout && stride == 1 {
            Residual::Identity
        } else {
            Residual::Project(
                Conv1x1::new(b, &format!("{name}.residual"), cin, cout, false, stride)?,
                BatchNorm::new(b, &format!("{name}.residual_bn"), cout)?,
            )
        };
        Ok(Self {
            graph: GraphConv::new(b, &format!("{name}.graph"), &gcfg, graph)?,
            gc_bn: BatchNorm::new(b, &format!("{name}.graph_bn"), cout)?,
            tcn: MsTcn::new(b, &format!("{name}.tcn"), &cfg.branches, cout, cout, stride)?,
            tcn_bn: BatchNorm::new(b, &format!("{name}.tcn_bn"), cout)?,
            residual,
            cin,
            cout,
            stride,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let h = self.graph.forward(ctx, x)?;
        let h = self.gc_bn.forward(ctx, h)?;
        let h = ctx.tape.relu(h);
        let y = self.tcn.forward(ctx, h)?;
        let y = self.tcn_bn.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let r = match &self.residual {
            Residual::Identity => x,
            Residual::Project(conv, bn) => {
                let r = conv.forward(ctx, x)?;
                bn.forward(ctx, r)?
            }
        };
        ctx.tape.add(y, r)
    }

    pub fn param_count(&self) -> usize {
        let res = match &self.residual {
            Residual::Identity => 0,
            Residual::Project(c, bn) => c.param_count() + bn.param_count(),
        };
        self.graph.param_count() + self.gc_bn.param_count() + self.tcn.param_count() + self.tcn_bn.param_count() + res
    }

    /// Mult-adds per sample at input length `t`; returns `(flops, t_out)`.
    pub fn flops(&self, t: usize, v: usize) -> Result<(usize, usize)> {
        let tout = self.tcn.output_frames(t)?;
        let res = match &self.residual {
            Residual::Identity => 0,
            Residual::Project(c, _) => c.flops(tout * v),
        };
        Ok((self.graph.flops(t, v) + self.tcn.flops(t, v)? + res, tout))
    }
}

/// Output of a model pass.
pub struct ModelOutput {
    pub logits: Var,
    /// Last block's features `(N, C, T', V)`, before pooling.
    pub features: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    data_bn: BatchNorm,
    embed: Conv1x1,
    embed_bn: BatchNorm,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl Model {
    /// Build the model and its freshly initialized parameters.
    pub fn new<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<F>, RunningStats<F>)> {
        cfg.validate()?;
        let graph = GraphSpec::for_joints(cfg.joints)?;
        let mut params = ParamStore::new();
        let mut stats = RunningStats::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        };
        let c0 = cfg.base_channels;
        let data_bn = BatchNorm::new(&mut b, "data_bn", cfg.in_channels * cfg.joints)?;
        let embed = Conv1x1::new(&mut b, "embed", cfg.in_channels, c0, true, 1)?;
        let embed_bn = BatchNorm::new(&mut b, "embed_bn", c0)?;
        let blocks = cfg
            .block_plan()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| Block::new(&mut b, &format!("blocks.{i}"), cfg, &graph, shape))
            .collect::<Result<Vec<_>>>()?;
        let last = blocks.last().map_or(c0, |blk| blk.cout);
        let head = Linear::new(&mut b, "head", last, cfg.num_classes)?;
        let model = Self {
            cfg: cfg.clone(),
            data_bn,
            embed,
            embed_bn,
            blocks,
            head,
        };
        Ok((model, params, stats))
    }

    /// Logits `(N, classes)` for input `(N, C0, T, V)`.
    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<ModelOutput> {
        Ok(self.trace(ctx, x)?.0)
    }

    /// Like [`Model::forward`], also returning the input of every block.
    pub fn trace<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<(ModelOutput, Vec<Var>)> {
        let s = ctx.tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.cfg.in_channels || s[3] != self.cfg.joints || s[2] == 0 {
            return Err(Error::shape(
                "model input",
                &s,
                &[0, self.cfg.in_channels, self.cfg.input_frames, self.cfg.joints],
            ));
        }
        // input normalization per (coordinate, joint) channel
        let (n, c, t, v) = (s[0], s[1], s[2], s[3]);
        let h = ctx.tape.permute(x, &[0, 1, 3, 2])?;
        let h = ctx.tape.reshape(h, &[n, c * v, t, 1])?;
        let h = self.data_bn.forward(ctx, h)?;
        let h = ctx.tape.reshape(h, &[n, c, v, t])?;
        let h = ctx.tape.permute(h, &[0, 1, 3, 2])?;
        let h = self.embed.forward(ctx, h)?;
        let h = self.embed_bn.forward(ctx, h)?;
        let mut h = ctx.tape.relu(h);
        let mut inputs = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            inputs.push(h);
            h = blk.forward(ctx, h)?;
        }
        let pooled = ctx.tape.mean(h, &[2, 3], false)?;
        let logits = self.head.forward(ctx, pooled)?;
        Ok((ModelOutput { logits, features: h }, inputs))
    }

    /// Parameter count from layer shapes.
    pub fn param_count(&self) -> usize {
        self.data_bn.param_count()
            + self.embed.param_count()
            + self.embed_bn.param_count()
            + self.blocks.iter().map(Block::param_count).sum::<usize>()
            + self.head.param_count()
    }

    /// Multiply-adds per sample of convolutions, graph construction and
    /// aggregation, poolings and the head, at `frames` input frames.
    pub fn flops(&self, frames: usize) -> Result<usize> {
        let v = self.cfg.joints;
        let mut t = frames;
        let mut total = self.embed.flops(t * v);
        for blk in &self.blocks {
            let (f, tout) = blk.flops(t, v)?;
            total += f;
            t = tout;
        }
        Ok(total + self.head.cin * self.head.cout)
    }

    /// Frames remaining after every strided block.
    pub fn output_frames(&self, frames: usize) -> Result<usize> {
        self.blocks.iter().try_fold(frames, |t, b| b.tcn.output_frames(t))
    }

    /// Names of graph layers (for topology export), in block order.
    pub fn layer_names(&self) -> Vec<String> {
        (0..self.blocks.len()).map(|i| format!("blocks.{i}")).collect()
    }
}

/// `(parameters, multiply-adds per sample)` for a configuration.
pub fn count_params_flops(cfg: &ModelConfig) -> Result<(usize, usize)> {
    let (model, _, _) = Model::new::<f32>(cfg, 0)?;
    Ok((model.param_count(), model.flops(cfg.input_frames)?))
}
