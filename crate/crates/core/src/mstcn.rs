//! Multi-scale temporal convolution: parallel branches concatenated on channels.
//!
//! Every branch starts with its own 1x1 channel reduction, then applies one of
//!
//! * `g<d>`: a 3-tap temporal convolution with dilation `d`,
//! * `M`: a 3-wide temporal max-pool,
//! * `S`: nothing (a strided shortcut).
//!
//! All branches pad to keep `T' = ceil(T / stride)`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{ConvGeometry, Var};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv1x1, Ctx, TemporalConv};
use crate::tensor::Scalar;

pub const KERNEL: usize = 3;
pub const POOL_WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Dilated(usize),
    MaxPool,
    Shortcut,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dilated(d) => write!(f, "g{d}"),
            Self::MaxPool => f.write_str("M"),
            Self::Shortcut => f.write_str("S"),
        }
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" => Ok(Self::MaxPool),
            "S" => Ok(Self::Shortcut),
            g => g
                .strip_prefix('g')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&d| (1..=5).contains(&d))
                .map(Self::Dilated)
                .ok_or_else(|| Error::Config(format!("unknown temporal branch {g:?} (M, S, g1..g5)"))),
        }
    }
}

/// Ordered branch list, written as a comma list such as `M,S,g1,g2,g3,g4`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSet(pub Vec<Branch>);

impl BranchSet {
    /// `M,S,g1,g2,g3,g4`.
    pub fn default_set() -> Self {
        Self(vec![
            Branch::MaxPool,
            Branch::Shortcut,
            Branch::Dilated(1),
            Branch::Dilated(2),
            Branch::Dilated(3),
            Branch::Dilated(4),
        ])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Output widths per branch; the first `C mod B` branches take one extra channel.
    pub fn widths(&self, cout: usize) -> Result<Vec<usize>> {
        let b = self.0.len();
        if b == 0 || cout < b {
            return Err(Error::Config(format!("{cout} channels cannot feed {b} temporal branches")));
        }
        Ok((0..b).map(|i| cout / b + usize::from(i < cout % b)).collect())
    }
}

impl fmt::Display for BranchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(Branch::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for BranchSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let branches = s.split(',').map(str::parse).collect::<Result<Vec<Branch>>>()?;
        if branches.is_empty() {
            return Err(Error::Config("empty branch set".into()));
        }
        for (i, b) in branches.iter().enumerate() {
            if branches[..i].contains(b) {
                return Err(Error::Config(format!("branch {b} listed twice")));
            }
        }
        Ok(Self(branches))
    }
}

/// Frames after one branch, with symmetric padding `dilation * (k - 1) / 2`.
pub fn branch_output_length(t: usize, k: usize, dilation: usize, stride: usize) -> Result<usize> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel size {k} has no symmetric padding")));
    }
    let geo = ConvGeometry {
        stride,
        dilation,
        padding: dilation * (k - 1) / 2,
        groups: 1,
    };
    geo.output_len(t, k)
        .filter(|&l| l >= 1)
        .ok_or_else(|| Error::Config(format!("temporal output length < 1 for T={t}")))
}

#[derive(Clone, Debug)]
enum BranchOp {
    Dilated(TemporalConv),
    MaxPool,
    Shortcut,
}

#[derive(Clone, Debug)]
pub struct MsTcn {
    reduce: Vec<Conv1x1>,
    ops: Vec<BranchOp>,
    pub branches: BranchSet,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
}

impl MsTcn {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, branches: &BranchSet, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("temporal stride must be 1 or 2, got {stride}")));
        }
        let widths = branches.widths(cout)?;
        let mut reduce = Vec::new();
        let mut ops = Vec::new();
        for (br, &w) in branches.0.iter().zip(&widths) {
            let bname = format!("{name}.{br}");
            let (red_stride, op) = match br {
                Branch::Dilated(d) => (
                    1,
                    BranchOp::Dilated(TemporalConv::new(b, &format!("{bname}.conv"), w, KERNEL, *d, stride)?),
                ),
                Branch::MaxPool => (1, BranchOp::MaxPool),
                Branch::Shortcut => (stride, BranchOp::Shortcut),
            };
            reduce.push(Conv1x1::new(b, &format!("{bname}.reduce"), cin, w, true, red_stride)?);
            ops.push(op);
        }
        Ok(Self {
            reduce,
            ops,
            branches: branches.clone(),
            stride,
            cin,
            cout,
        })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.ops.len());
        for (red, op) in self.reduce.iter().zip(&self.ops) {
            let h = red.forward(ctx, x)?;
            outs.push(match op {
                BranchOp::Dilated(conv) => conv.forward(ctx, h)?,
                BranchOp::MaxPool => ctx.tape.max_pool_temporal(h, POOL_WINDOW, self.stride, POOL_WINDOW / 2)?,
                BranchOp::Shortcut => h,
            });
        }
        ctx.tape.concat(&outs, 1)
    }

    pub fn output_frames(&self, t: usize) -> Result<usize> {
        branch_output_length(t, KERNEL, 1, self.stride)
    }

    pub fn param_count(&self) -> usize {
        let ops: usize = self
            .ops
            .iter()
            .map(|op| match op {
                BranchOp::Dilated(c) => c.param_count(),
                _ => 0,
            })
            .sum();
        self.reduce.iter().map(Conv1x1::param_count).sum::<usize>() + ops
    }

    /// Mult-adds per sample for input length `t` (max-pool comparisons not counted).
    pub fn flops(&self, t: usize, v: usize) -> Result<usize> {
        let tout = self.output_frames(t)?;
        Ok(self
            .reduce
            .iter()
            .zip(&self.ops)
            .map(|(r, op)| match op {
                BranchOp::Dilated(c) => r.flops(t * v) + c.flops(tout * v),
                BranchOp::MaxPool => r.flops(t * v),
                BranchOp::Shortcut => r.flops(tout * v),
            })
            .sum())
    }

    /// The branch reductions, in branch order.
    pub fn reductions(&self) -> &[Conv1x1] {
        &self.reduce
    }

    /// The dilated convolution of branch `i`, if it has one.
    pub fn temporal_conv(&self, i: usize) -> Option<&TemporalConv> {
        match &self.ops[i] {
            BranchOp::Dilated(c) => Some(c),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let s: BranchSet = "M,S,g1,g2,g3,g4".parse().unwrap();
        assert_eq!(s, BranchSet::default_set());
        assert_eq!(s.to_string(), "M,S,g1,g2,g3,g4");
        assert!("M,M".parse::<BranchSet>().is_err());
        assert!("g7".parse::<BranchSet>().is_err());
    }

    #[test]
    fn widths_split_channels() {
        assert_eq!(BranchSet::default_set().widths(96).unwrap(), vec![16; 6]);
        assert_eq!(BranchSet::default_set().widths(64).unwrap(), vec![11, 11, 11, 11, 10, 10]);
    }

    #[test]
    fn output_lengths() {
        assert_eq!(branch_output_length(150, 3, 4, 1).unwrap(), 150);
        assert_eq!(branch_output_length(150, 3, 1, 2).unwrap(), 75);
        assert_eq!(branch_output_length(1, 3, 1, 1).unwrap(), 1);
        assert_eq!(branch_output_length(30, 3, 1, 2).unwrap(), 15);
        assert_eq!(branch_output_length(15, 3, 1, 2).unwrap(), 8);
        assert!(branch_output_length(10, 4, 1, 1).is_err());
    }
}
