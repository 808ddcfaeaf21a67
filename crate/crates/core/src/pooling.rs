//! Average and gated poolings over `(N, C, T, V)` features, and the
//! spatio-temporal coordinate-aware gate built from them.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv1x1, Ctx};
use crate::tensor::Scalar;

fn check_rank4<F: Scalar>(tape: &Tape<F>, x: Var, op: &'static str) -> Result<[usize; 4]> {
    let s = tape.shape(x);
    <[usize; 4]>::try_from(s).map_err(|_| Error::shape(op, s, &[0, 0, 0, 0]))
}

/// Mean over frames: `(N, C, V)`.
pub fn tap<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    check_rank4(tape, x, "tap")?;
    tape.mean(x, &[2], false)
}

/// Mean over joints: `(N, C, T)`.
pub fn vap<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    check_rank4(tape, x, "vap")?;
    tape.mean(x, &[3], false)
}

/// Frame weights of temporal-gated pooling, `(N, 1, T, 1)`; they sum to one over T.
pub fn tgp_weights<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    check_rank4(tape, x, "tgp")?;
    let scores = tape.mean(x, &[1, 3], true)?;
    tape.softmax(scores, 2)
}

/// Temporal-gated pooling: softmax-weighted frame sum, `(N, C, V)`.
pub fn tgp<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let w = tgp_weights(tape, x)?;
    let weighted = tape.mul(x, w)?;
    tape.sum(weighted, &[2], false)
}

/// Channel weights of channel-gated pooling, `(N, C, 1, 1)`.
pub fn cgp_weights<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    check_rank4(tape, x, "cgp")?;
    let scores = tape.mean(x, &[2, 3], true)?;
    tape.softmax(scores, 1)
}

/// Channel-gated pooling: softmax-weighted channel sum, `(N, T, V)`.
pub fn cgp<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let w = cgp_weights(tape, x)?;
    let weighted = tape.mul(x, w)?;
    tape.sum(weighted, &[1], false)
}

/// Channel-gated pooling within each of `groups` contiguous channel groups: `(N, K, T, V)`.
pub fn grouped_cgp<F: Scalar>(tape: &mut Tape<F>, x: Var, groups: usize) -> Result<Var> {
    let [n, c, t, v] = check_rank4(tape, x, "grouped_cgp")?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!("{c} channels do not split into {groups} groups")));
    }
    let xg = tape.reshape(x, &[n * groups, c / groups, t, v])?;
    let pooled = cgp(tape, xg)?;
    tape.reshape(pooled, &[n, groups, t, v])
}

/// Reduction ratio actually used for `channels`: `r` lowered until the
/// hidden width is at least 4 (or the full width when C < 4).
pub fn effective_reduction(channels: usize, r: usize) -> Result<usize> {
    if r == 0 || channels == 0 {
        return Err(Error::Config("reduction ratio and channels must be positive".into()));
    }
    let r = r.min((channels / 4).max(1));
    if !channels.is_multiple_of(r) {
        return Err(Error::Config(format!("reduction ratio {r} does not divide {channels} channels")));
    }
    Ok(r)
}

/// Spatio-temporal coordinate-aware gate.
///
/// The frame profile (VAP, length T) and joint profile (TAP, length V) are
/// joined along the last axis in that order, reduced by a shared 1x1 map and
/// hardswish, split back at T, and expanded into sigmoid gates of shape
/// `(C, T, 1)` and `(C, 1, V)`.
#[derive(Clone, Debug)]
pub struct Stca {
    pub reduce: Conv1x1,
    pub temporal: Conv1x1,
    pub spatial: Conv1x1,
    pub channels: usize,
    pub hidden: usize,
}

impl Stca {
    pub fn new<F: Scalar>(b: &mut Builder<F>, name: &str, channels: usize, r: usize) -> Result<Self> {
        let hidden = channels / effective_reduction(channels, r)?;
        Ok(Self {
            reduce: Conv1x1::new(b, &format!("{name}.reduce"), channels, hidden, true, 1)?,
            temporal: Conv1x1::new(b, &format!("{name}.temporal"), hidden, channels, true, 1)?,
            spatial: Conv1x1::new(b, &format!("{name}.spatial"), hidden, channels, true, 1)?,
            channels,
            hidden,
        })
    }

    /// `(g_t (N,C,T,1), g_v (N,C,1,V))`.
    pub fn gates<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<(Var, Var)> {
        let [n, c, t, v] = check_rank4(ctx.tape, x, "stca")?;
        if c != self.channels {
            return Err(Error::shape("stca", &[n, c, t, v], &[self.channels]));
        }
        let frame_profile = vap(ctx.tape, x)?;
        let joint_profile = tap(ctx.tape, x)?;
        let joined = ctx.tape.concat(&[frame_profile, joint_profile], 2)?;
        let joined = ctx.tape.reshape(joined, &[n, c, t + v, 1])?;
        let j = self.reduce.forward(ctx, joined)?;
        let j = ctx.tape.hardswish(j);
        let jt = ctx.tape.narrow(j, 2, 0, t)?;
        let jv = ctx.tape.narrow(j, 2, t, v)?;
        let gt = self.temporal.forward(ctx, jt)?;
        let gt = ctx.tape.sigmoid(gt);
        let gv = self.spatial.forward(ctx, jv)?;
        let gv = ctx.tape.reshape(gv, &[n, c, 1, v])?;
        let gv = ctx.tape.sigmoid(gv);
        Ok((gt, gv))
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<F>, x: Var) -> Result<Var> {
        let (gt, gv) = self.gates(ctx, x)?;
        let y = ctx.tape.mul(x, gt)?;
        ctx.tape.mul(y, gv)
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.temporal.param_count() + self.spatial.param_count()
    }

    pub fn flops(&self, t: usize, v: usize) -> usize {
        self.reduce.flops(t + v) + self.temporal.flops(t) + self.spatial.flops(v) + 2 * self.channels * t * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run<R>(x: Tensor<f64>, f: impl FnOnce(&mut Tape<f64>, Var) -> Result<Var>, check: impl FnOnce(&Tensor<f64>) -> R) -> R {
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let y = f(&mut tape, v).unwrap();
        check(tape.value(y))
    }

    #[test]
    fn tgp_of_two_frames() {
        // C=V=1, frames [1,3]
        let x = Tensor::from_f64(&[1, 1, 2, 1], &[1.0, 3.0]).unwrap();
        let expected = 1.0 * 0.11920292202211755 + 3.0 * 0.8807970779778823;
        run(x.clone(), tgp, |y| assert!((y.item() - expected).abs() < 1e-12));
        let xc = Tensor::from_f64(&[1, 2, 1, 1], &[1.0, 3.0]).unwrap();
        run(xc, cgp, |y| assert!((y.item() - 2.76159).abs() < 1e-4));
    }

    #[test]
    fn cgp_of_zero_channels_is_zero() {
        run(Tensor::zeros(&[1, 2, 1, 1]), cgp, |y| assert_eq!(y.item(), 0.0));
    }

    #[test]
    fn identical_frames_pool_to_the_frame() {
        let frame = [0.3, -1.0, 2.0, 0.5, 0.1, 0.0];
        let mut data = Vec::new();
        for c in 0..2 {
            for _ in 0..4 {
                data.extend_from_slice(&frame[c * 3..c * 3 + 3]);
            }
        }
        let x = Tensor::from_f64(&[1, 2, 4, 3], &data).unwrap();
        run(x, tgp, |y| {
            for (a, b) in y.data().iter().zip(frame) {
                assert!((a - b).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn tap_and_vap_commute() {
        let x = Tensor::from_f64(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let a = run(x.clone(), |t, v| {
            let p = tap(t, v)?;
            t.mean(p, &[2], false)
        }, |y| y.item());
        let b = run(x.clone(), |t, v| {
            let p = vap(t, v)?;
            t.mean(p, &[2], false)
        }, |y| y.item());
        assert!((a - b).abs() < 1e-15);
        run(x, tap, |y| assert_eq!(y.data(), &[2.5, 3.5, 6.0]));
    }

    #[test]
    fn reduction_is_clamped() {
        assert_eq!(effective_reduction(64, 4).unwrap(), 4);
        assert_eq!(effective_reduction(8, 4).unwrap(), 2);
        assert_eq!(effective_reduction(3, 4).unwrap(), 1);
        assert!(effective_reduction(20, 3).is_err());
    }
}
