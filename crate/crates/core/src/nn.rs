//! Parameterized layers shared by the graph and temporal modules.
//!
//! Layers hold only parameter handles. Values live in a [`ParamStore`], so one
//! layer description serves both the 32-bit training store and a 64-bit copy
//! used for gradient checks.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeometry, Tape, Var};
use crate::error::Result;
use crate::params::{fan_in_uniform, ParamId, ParamStore, RunningStats, StatsId};
use crate::tensor::{Scalar, Tensor};

/// Everything a forward pass needs.
pub struct Ctx<'a, F: Scalar> {
    pub tape: &'a mut Tape<F>,
    pub params: &'a ParamStore<F>,
    pub stats: &'a mut RunningStats<F>,
    pub train: bool,
}

impl<'a, F: Scalar> Ctx<'a, F> {
    pub fn new(tape: &'a mut Tape<F>, params: &'a ParamStore<F>, stats: &'a mut RunningStats<F>, train: bool) -> Self {
        Self {
            tape,
            params,
            stats,
            train,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }
}

/// Allocates named parameters during model construction.
pub struct Builder<'a, F: Scalar> {
    pub params: &'a mut ParamStore<F>,
    pub stats: &'a mut RunningStats<F>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    /// Fan-in scaled uniform weight, decayed.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let value = fan_in_uniform(shape, fan_in, self.rng);
        self.params.add(name, value, true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, weight_decay: bool) -> Result<ParamId> {
        self.params.add(name, Tensor::full(shape, F::of(value)), weight_decay)
    }

    /// Rank-0 parameter, never decayed.
    pub fn scalar(&mut self, name: &str, value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor::scalar(F::of(value)), false)
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<F>, weight_decay: bool) -> Result<ParamId> {
        self.params.add(name, value, weight_decay)
    }
}

/// Channel map on `(N, C, T, V)`, optionally strided along T.
#[derive(Clone, Debug)]
pub struct Conv1x1 {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl Conv1x1 {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cin: usize, cout: usize, bias: bool, stride: usize) -> Result<Self> {
        let weight = b.weight(&format!("{name}.weight"), &[cout, cin, 1], cin)?;
        let bias = if bias {
            Some(b.constant(&format!("{name}.bias"), &[cout], 0.0, true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
            stride,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let geo = ConvGeometry {
            stride: self.stride,
            dilation: 1,
            padding: 0,
            groups: 1,
        };
        let y = ctx.tape.conv_temporal(x, w, geo)?;
        add_channel_bias(ctx, y, self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.cin * self.cout + self.bias.map_or(0, |_| self.cout)
    }

    /// Mult-adds for `positions` output positions per sample.
    pub fn flops(&self, positions: usize) -> usize {
        self.cin * self.cout * positions
    }
}

fn add_channel_bias<F: Scalar>(ctx: &mut Ctx<F>, y: Var, bias: Option<ParamId>) -> Result<Var> {
    let Some(id) = bias else { return Ok(y) };
    let b = ctx.param(id);
    let c = ctx.tape.shape(b)[0];
    let b = ctx.tape.reshape(b, &[1, c, 1, 1])?;
    ctx.tape.add(y, b)
}

/// Dense temporal convolution, `k` taps with symmetric padding, no bias.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    pub weight: ParamId,
    pub channels: usize,
    pub geometry: ConvGeometry,
    pub kernel: usize,
}

impl TemporalConv {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, channels: usize, kernel: usize, dilation: usize, stride: usize) -> Result<Self> {
        let weight = b.weight(&format!("{name}.weight"), &[channels, channels, kernel], channels * kernel)?;
        Ok(Self {
            weight,
            channels,
            geometry: ConvGeometry {
                stride,
                dilation,
                padding: dilation * (kernel - 1) / 2,
                groups: 1,
            },
            kernel,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.tape.conv_temporal(x, w, self.geometry)
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.channels * self.kernel
    }

    pub fn flops(&self, positions: usize) -> usize {
        self.channels * self.channels * self.kernel * positions
    }
}

/// Per-channel normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, channels: usize) -> Result<Self> {
        Self::with_scale(b, name, channels, 1.0)
    }

    /// Scale initialized to `gamma`; zero makes a branch start dead.
    pub fn with_scale<F: Scalar>(b: &mut Builder<F>, name: &str, channels: usize, gamma: f64) -> Result<Self> {
        Ok(Self {
            gamma: b.constant(&format!("{name}.gamma"), &[channels], gamma, false)?,
            beta: b.constant(&format!("{name}.beta"), &[channels], 0.0, false)?,
            stats: b.stats.add(name, channels),
            channels,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let train = ctx.train;
        ctx.tape.batch_norm(x, g, b, ctx.stats.get_mut(self.stats), train)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// `y = x W^T + b` on `(N, C_in)`; `W` is `(C_out, C_in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            weight: b.weight(&format!("{name}.weight"), &[cout, cin], cin)?,
            bias: b.constant(&format!("{name}.bias"), &[cout], 0.0, true)?,
            cin,
            cout,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let wt = ctx.tape.permute(w, &[1, 0])?;
        let y = ctx.tape.matmul(x, wt)?;
        let b = ctx.param(self.bias);
        ctx.tape.add(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.cin * self.cout + self.cout
    }
}
