//! Numeric kernels shared by the forward and backward passes.
//!
//! Parallel loops only split work over disjoint outputs and all reductions
//! run serially in a fixed order, so results are bitwise reproducible
//! regardless of thread count.

use rayon::prelude::*;

use super::broadcast::{accumulate_row, broadcast_shape, for_each_broadcast, for_each_row, strides_of};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Work below this many multiply-adds runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

pub(crate) fn permute<F: Scalar>(t: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape("permute", t.shape(), axes));
    }
    let in_strides = strides_of(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    // strides of the input, listed in output-axis order
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = t.data();
    let mut out = Vec::with_capacity(t.numel());
    if rank == 0 {
        out.push(src[0]);
        return Tensor::new(&out_shape, out);
    }
    let inner = out_shape[rank - 1];
    let inner_stride = gather[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let total = t.numel();
    while out.len() < total {
        let mut off = base;
        for _ in 0..inner {
            out.push(src[off]);
            off += inner_stride;
        }
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            idx[axis] += 1;
            base += gather[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= gather[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// (outer, axis extent, inner) decomposition around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn narrow<F: Scalar>(t: &Tensor<F>, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
    if axis >= t.rank() || start + len > t.shape()[axis] {
        return Err(Error::shape("narrow", t.shape(), &[axis, start, len]));
    }
    let (outer, n, inner) = split_at_axis(t.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

/// Adjoint of [`narrow`]: embed `g` into zeros of `full_shape`.
pub(crate) fn narrow_backward<F: Scalar>(g: &Tensor<F>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<F> {
    let (outer, n, inner) = split_at_axis(full_shape, axis);
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(full_shape);
    let dst = out.data_mut();
    for o in 0..outer {
        let base = (o * n + start) * inner;
        let src = &g.data()[o * len * inner..(o + 1) * len * inner];
        dst[base..base + len * inner].copy_from_slice(src);
    }
    out
}

pub(crate) fn concat<F: Scalar>(parts: &[&Tensor<F>], axis: usize) -> Result<Tensor<F>> {
    let first = parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", first.shape(), &[axis]));
    }
    let mut total = 0;
    for p in parts {
        let same = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        total += p.shape()[axis];
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// Shape after reducing `axes` (kept as extent 1).
pub(crate) fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &n)| if axes.contains(&i) { 1 } else { n })
        .collect()
}

/// Sum over `axes`; the result keeps reduced axes with extent 1.
pub(crate) fn sum_axes<F: Scalar>(t: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>> {
    if axes.iter().any(|&a| a >= t.rank()) {
        return Err(Error::shape("sum", t.shape(), axes));
    }
    let target = reduced_shape(t.shape(), axes);
    let mut out = Tensor::zeros(&target);
    let src = t.data();
    let dst = out.data_mut();
    for_each_row(t.shape(), &target, &[], |r| {
        accumulate_row(&mut dst[r.ia..], r.sa, &src[r.o..r.o + r.len]);
    });
    Ok(out)
}

/// Broadcast `g` (a keep-dim reduced shape) back to `shape`.
pub(crate) fn expand_to<F: Scalar>(g: &Tensor<F>, shape: &[usize]) -> Tensor<F> {
    let mut out = vec![F::zero(); shape.iter().product()];
    let src = g.data();
    for_each_row(shape, g.shape(), &[], |r| {
        let dst = &mut out[r.o..r.o + r.len];
        if r.sa == 0 {
            dst.fill(src[r.ia]);
        } else {
            dst.copy_from_slice(&src[r.ia..r.ia + r.len]);
        }
    });
    Tensor::new(shape, out).expect("expand shape")
}

pub(crate) fn softmax<F: Scalar>(t: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    if axis >= t.rank() {
        return Err(Error::shape("softmax", t.shape(), &[axis]));
    }
    let (outer, n, inner) = split_at_axis(t.shape(), axis);
    let src = t.data();
    let mut out = vec![F::zero(); t.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).fold(F::neg_infinity(), |m, j| m.max(src[at(j)]));
            let mut z = F::zero();
            for j in 0..n {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                z = z + e;
            }
            for j in 0..n {
                out[at(j)] = out[at(j)] / z;
            }
        }
    }
    Tensor::new(t.shape(), out)
}

/// dx = y * (g - sum_axis(g * y)).
pub(crate) fn softmax_backward<F: Scalar>(y: &Tensor<F>, g: &Tensor<F>, axis: usize) -> Tensor<F> {
    let (outer, n, inner) = split_at_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![F::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot: F = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
            for j in 0..n {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), out).expect("softmax grad shape")
}

/// Batch layout of a broadcast matmul.
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// (lhs matrix index, rhs matrix index) per output matrix.
    pub pairs: Vec<(usize, usize)>,
    pub out_shape: Vec<usize>,
    pub lhs_batches: usize,
    pub rhs_batches: usize,
}

/// Promote rank-1 operands to matrices: lhs `[k]` -> `[1,k]`, rhs `[k]` -> `[k,1]`.
pub(crate) fn matmul_plan(lhs: &[usize], rhs: &[usize]) -> Result<MatmulPlan> {
    if lhs.is_empty() || rhs.is_empty() {
        return Err(Error::shape("matmul", lhs, rhs));
    }
    let l: Vec<usize> = if lhs.len() == 1 { vec![1, lhs[0]] } else { lhs.to_vec() };
    let r: Vec<usize> = if rhs.len() == 1 { vec![rhs[0], 1] } else { rhs.to_vec() };
    let (m, k) = (l[l.len() - 2], l[l.len() - 1]);
    let (k2, n) = (r[r.len() - 2], r[r.len() - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", lhs, rhs));
    }
    let lb = &l[..l.len() - 2];
    let rb = &r[..r.len() - 2];
    let batch = broadcast_shape(lb, rb).ok_or_else(|| Error::shape("matmul", lhs, rhs))?;
    let mut pairs = Vec::with_capacity(batch.iter().product());
    for_each_broadcast(&batch, lb, rb, |_, ia, ib| pairs.push((ia, ib)));
    let mut out_shape = batch.clone();
    if lhs.len() > 1 {
        out_shape.push(m);
    }
    if rhs.len() > 1 {
        out_shape.push(n);
    }
    Ok(MatmulPlan {
        m,
        k,
        n,
        pairs,
        out_shape,
        lhs_batches: lb.iter().product(),
        rhs_batches: rb.iter().product(),
    })
}

/// Strided view of a row-major matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    off: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn dense(cols: usize) -> Self {
        View { off: 0, rs: cols, cs: 1 }
    }

    fn transposed(cols: usize) -> Self {
        View { off: 0, rs: 1, cs: cols }
    }

    fn at(self, off: usize) -> Self {
        View { off: self.off + off, ..self }
    }

    fn fits(&self, rows: usize, cols: usize, len: usize) -> bool {
        rows == 0 || cols == 0 || self.off + (rows - 1) * self.rs + (cols - 1) * self.cs < len
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, each read through a view.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_view<F: Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[F],
    av: View,
    b: &[F],
    bv: View,
    beta: F,
    c: &mut [F],
    cv: View,
) {
    assert!(av.fits(m, k, a.len()) && bv.fits(k, n, b.len()) && cv.fits(m, n, c.len()), "gemm view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the extents of all three views were checked against their
    // buffers above, and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            (a.as_ptr().add(av.off), av.rs as isize, av.cs as isize),
            (b.as_ptr().add(bv.off), bv.rs as isize, bv.cs as isize),
            beta,
            (c.as_mut_ptr().add(cv.off), cv.rs as isize, cv.cs as isize),
        );
    }
}

pub(crate) fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![F::zero(); plan.pairs.len() * m * n];
    let (ad, bd) = (a.data(), b.data());
    let work = |(c, &(ia, ib)): (&mut [F], &(usize, usize))| {
        let (av, bv) = (View::dense(k).at(ia * m * k), View::dense(n).at(ib * k * n));
        gemm_view((m, k, n), ad, av, bd, bv, F::zero(), c, View::dense(n));
    };
    if m * n * k * plan.pairs.len() >= PAR_THRESHOLD && m * n > 0 {
        out.par_chunks_mut(m * n).zip(plan.pairs.par_iter()).for_each(work);
    } else if m * n > 0 {
        out.chunks_mut(m * n).zip(plan.pairs.iter()).for_each(work);
    }
    Tensor::new(&plan.out_shape, out)
}

/// Gradients of a broadcast matmul for whichever operands are requested.
///
/// Each gradient batch sums its contributing output batches in index order.
pub(crate) fn matmul_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    g: &Tensor<F>,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor<F>>, Option<Tensor<F>>) {
    let plan = matmul_plan(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let par = m * n * k * plan.pairs.len() >= PAR_THRESHOLD;

    let grad_a = want_a.then(|| {
        let sources = contributors(&plan.pairs, plan.lhs_batches, |p| p.0);
        let work = |(ia, dst): (usize, &mut [F])| {
            for (beta, &o) in betas(&sources[ia]) {
                let ib = plan.pairs[o].1;
                let gv = View::dense(n).at(o * m * n);
                let bv = View::transposed(n).at(ib * k * n);
                gemm_view((m, n, k), gd, gv, bd, bv, beta, dst, View::dense(k));
            }
        };
        let mut acc = vec![F::zero(); plan.lhs_batches * m * k];
        run_chunks(&mut acc, m * k, par, work);
        Tensor::new(a.shape(), acc).expect("matmul grad shape")
    });

    let grad_b = want_b.then(|| {
        let sources = contributors(&plan.pairs, plan.rhs_batches, |p| p.1);
        let work = |(ib, dst): (usize, &mut [F])| {
            for (beta, &o) in betas(&sources[ib]) {
                let ia = plan.pairs[o].0;
                let av = View::transposed(k).at(ia * m * k);
                let gv = View::dense(n).at(o * m * n);
                gemm_view((k, m, n), ad, av, gd, gv, beta, dst, View::dense(n));
            }
        };
        let mut acc = vec![F::zero(); plan.rhs_batches * k * n];
        run_chunks(&mut acc, k * n, par, work);
        Tensor::new(b.shape(), acc).expect("matmul grad shape")
    });

    (grad_a, grad_b)
}

/// Output batches feeding each operand batch, in ascending order.
fn contributors(pairs: &[(usize, usize)], batches: usize, pick: impl Fn(&(usize, usize)) -> usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); batches];
    for (o, p) in pairs.iter().enumerate() {
        out[pick(p)].push(o);
    }
    out
}

/// Pairs each item with the gemm `beta`: overwrite first, accumulate after.
fn betas<F: Scalar, T>(items: &[T]) -> impl Iterator<Item = (F, &T)> {
    items.iter().enumerate().map(|(i, x)| (if i == 0 { F::zero() } else { F::one() }, x))
}

fn run_chunks<F: Scalar>(buf: &mut [F], chunk: usize, par: bool, work: impl Fn((usize, &mut [F])) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    if par {
        buf.par_chunks_mut(chunk).enumerate().for_each(work);
    } else {
        buf.chunks_mut(chunk).enumerate().for_each(work);
    }
}

/// Geometry of a temporal convolution over `(N, C, T, V)` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn output_len(&self, t: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel.max(1) - 1) + 1;
        let padded = t + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

pub(crate) struct ConvDims {
    n: usize,
    cin: usize,
    t: usize,
    v: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    tout: usize,
}

pub(crate) fn conv_dims(x: &[usize], w: &[usize], geo: &ConvGeometry) -> Result<ConvDims> {
    if x.len() != 4 || w.len() != 3 || geo.groups == 0 {
        return Err(Error::shape("conv_temporal", x, w));
    }
    let (n, cin, t, v) = (x[0], x[1], x[2], x[3]);
    let (cout, cin_g, k) = (w[0], w[1], w[2]);
    if cin % geo.groups != 0 || cout % geo.groups != 0 || cin / geo.groups != cin_g {
        return Err(Error::shape("conv_temporal", x, w));
    }
    let tout = geo
        .output_len(t, k)
        .filter(|&l| l >= 1)
        .ok_or_else(|| Error::Config(format!("temporal convolution output length < 1 (T={t}, kernel={k}, {geo:?})")))?;
    Ok(ConvDims {
        n,
        cin,
        t,
        v,
        cout,
        cin_g,
        cout_g: cout / geo.groups,
        k,
        tout,
    })
}

/// Input frame read by output frame `to` at kernel tap `j`, if inside the sequence.
#[inline]
fn tap_frame(to: usize, j: usize, geo: &ConvGeometry, t: usize) -> Option<usize> {
    let pos = (to * geo.stride + j * geo.dilation) as isize - geo.padding as isize;
    (pos >= 0 && (pos as usize) < t).then_some(pos as usize)
}

/// How one kernel tap reads a group's input planes.
enum TapInput {
    /// Unit stride: output frames `lo..hi` read input frames from `start` on.
    Window { lo: usize, hi: usize, start: usize },
    /// Strided taps read a gathered `(cin_g, tout * v)` copy.
    Gathered,
    /// The tap never lands inside the sequence.
    Empty,
}

impl ConvDims {
    fn tap_input(&self, j: usize, geo: &ConvGeometry) -> TapInput {
        if geo.stride != 1 {
            return TapInput::Gathered;
        }
        let off = (j * geo.dilation) as isize - geo.padding as isize;
        let lo = (-off).max(0) as usize;
        let hi = (self.t as isize - off).clamp(0, self.tout as isize) as usize;
        if lo >= hi {
            TapInput::Empty
        } else {
            TapInput::Window { lo, hi, start: (lo as isize + off) as usize }
        }
    }

    /// Weights of tap `j` for group `grp` as a `(cout_g, cin_g)` view of the kernel buffer.
    fn tap_weights(&self, grp: usize, j: usize) -> View {
        View {
            off: grp * self.cout_g * self.cin_g * self.k + j,
            rs: self.cin_g * self.k,
            cs: self.k,
        }
    }

    /// Copies the frames tap `j` reads from `xg` into `dst` as `(cin_g, tout * v)`.
    fn gather<F: Scalar>(&self, xg: &[F], j: usize, geo: &ConvGeometry, dst: &mut [F]) {
        let (v, plane) = (self.v, self.t * self.v);
        for cl in 0..self.cin_g {
            for to in 0..self.tout {
                let row = &mut dst[(cl * self.tout + to) * v..][..v];
                match tap_frame(to, j, geo, self.t) {
                    Some(ti) => row.copy_from_slice(&xg[cl * plane + ti * v..][..v]),
                    None => row.fill(F::zero()),
                }
            }
        }
    }

    /// Adds a `(cin_g, tout * v)` tap gradient back onto the frames it was gathered from.
    fn scatter<F: Scalar>(&self, src: &[F], j: usize, geo: &ConvGeometry, dxg: &mut [F]) {
        let (v, plane) = (self.v, self.t * self.v);
        for cl in 0..self.cin_g {
            for to in 0..self.tout {
                if let Some(ti) = tap_frame(to, j, geo, self.t) {
                    let row = &src[(cl * self.tout + to) * v..][..v];
                    for (o, &x) in dxg[cl * plane + ti * v..][..v].iter_mut().zip(row) {
                        *o = *o + x;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_temporal<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, geo: &ConvGeometry) -> Result<Tensor<F>> {
    let d = conv_dims(x.shape(), w.shape(), geo)?;
    let (xd, wd) = (x.data(), w.data());
    let (plane, cols) = (d.t * d.v, d.tout * d.v);
    let mut out = vec![F::zero(); d.n * d.cout * cols];
    let work = |(b, dst): (usize, &mut [F])| {
        let mut scratch = Vec::new();
        for grp in 0..geo.groups {
            let xg = &xd[(b * d.cin + grp * d.cin_g) * plane..][..d.cin_g * plane];
            let og = &mut dst[grp * d.cout_g * cols..][..d.cout_g * cols];
            for j in 0..d.k {
                let wv = d.tap_weights(grp, j);
                match d.tap_input(j, geo) {
                    TapInput::Window { lo, hi, start } => {
                        let xv = View::dense(plane).at(start * d.v);
                        let ov = View::dense(cols).at(lo * d.v);
                        gemm_view((d.cout_g, d.cin_g, (hi - lo) * d.v), wd, wv, xg, xv, F::one(), og, ov);
                    }
                    TapInput::Gathered => {
                        scratch.resize(d.cin_g * cols, F::zero());
                        d.gather(xg, j, geo, &mut scratch);
                        let sv = View::dense(cols);
                        gemm_view((d.cout_g, d.cin_g, cols), wd, wv, &scratch, sv, F::one(), og, View::dense(cols));
                    }
                    TapInput::Empty => {}
                }
            }
        }
    };
    let par = out.len() * d.cin_g * d.k >= PAR_THRESHOLD;
    run_chunks(&mut out, d.cout * cols, par, work);
    Tensor::new(&[d.n, d.cout, d.tout, d.v], out)
}

pub(crate) fn conv_temporal_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    g: &Tensor<F>,
    geo: &ConvGeometry,
    want_x: bool,
    want_w: bool,
) -> (Option<Tensor<F>>, Option<Tensor<F>>) {
    let d = conv_dims(x.shape(), w.shape(), geo).expect("validated in forward");
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let (plane, cols) = (d.t * d.v, d.tout * d.v);
    let par = g.numel() * d.cin_g * d.k >= PAR_THRESHOLD;

    let grad_x = want_x.then(|| {
        let mut dx = vec![F::zero(); d.n * d.cin * plane];
        let work = |(b, dst): (usize, &mut [F])| {
            let mut scratch = Vec::new();
            for grp in 0..geo.groups {
                let gg = &gd[(b * d.cout + grp * d.cout_g) * cols..][..d.cout_g * cols];
                let dxg = &mut dst[grp * d.cin_g * plane..][..d.cin_g * plane];
                for j in 0..d.k {
                    let wt = d.tap_weights(grp, j);
                    let wt = View { rs: wt.cs, cs: wt.rs, ..wt };
                    match d.tap_input(j, geo) {
                        TapInput::Window { lo, hi, start } => {
                            let gv = View::dense(cols).at(lo * d.v);
                            let xv = View::dense(plane).at(start * d.v);
                            gemm_view((d.cin_g, d.cout_g, (hi - lo) * d.v), wd, wt, gg, gv, F::one(), dxg, xv);
                        }
                        TapInput::Gathered => {
                            scratch.resize(d.cin_g * cols, F::zero());
                            let gv = View::dense(cols);
                            gemm_view((d.cin_g, d.cout_g, cols), wd, wt, gg, gv, F::zero(), &mut scratch, gv);
                            d.scatter(&scratch, j, geo, dxg);
                        }
                        TapInput::Empty => {}
                    }
                }
            }
        };
        run_chunks(&mut dx, d.cin * plane, par, work);
        Tensor::new(x.shape(), dx).expect("conv dx shape")
    });

    // Batches accumulate into the kernel gradient serially, in order.
    let grad_w = want_w.then(|| {
        let mut dw = vec![F::zero(); w.numel()];
        let mut scratch = Vec::new();
        for b in 0..d.n {
            for grp in 0..geo.groups {
                let gg = &gd[(b * d.cout + grp * d.cout_g) * cols..][..d.cout_g * cols];
                let xg = &xd[(b * d.cin + grp * d.cin_g) * plane..][..d.cin_g * plane];
                for j in 0..d.k {
                    let wv = d.tap_weights(grp, j);
                    match d.tap_input(j, geo) {
                        TapInput::Window { lo, hi, start } => {
                            let gv = View::dense(cols).at(lo * d.v);
                            let xt = View::transposed(plane).at(start * d.v);
                            gemm_view((d.cout_g, (hi - lo) * d.v, d.cin_g), gg, gv, xg, xt, F::one(), &mut dw, wv);
                        }
                        TapInput::Gathered => {
                            scratch.resize(d.cin_g * cols, F::zero());
                            d.gather(xg, j, geo, &mut scratch);
                            let (gv, st) = (View::dense(cols), View::transposed(cols));
                            gemm_view((d.cout_g, cols, d.cin_g), gg, gv, &scratch, st, F::one(), &mut dw, wv);
                        }
                        TapInput::Empty => {}
                    }
                }
            }
        }
        Tensor::new(w.shape(), dw).expect("conv dw shape")
    });

    (grad_x, grad_w)
}

/// Temporal max pooling on `(N, C, T, V)`; padding frames act as -inf.
/// Returns the output and the flat input index chosen for every output element.
pub(crate) fn max_pool_temporal<F: Scalar>(
    x: &Tensor<F>,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 || window == 0 {
        return Err(Error::shape("max_pool_temporal", s, &[window, stride, padding]));
    }
    let geo = ConvGeometry {
        stride,
        dilation: 1,
        padding,
        groups: 1,
    };
    let (n, c, t, v) = (s[0], s[1], s[2], s[3]);
    let tout = geo
        .output_len(t, window)
        .filter(|&l| l >= 1)
        .ok_or_else(|| Error::Config(format!("max-pool output length < 1 (T={t})")))?;
    let xd = x.data();
    let mut out = vec![F::zero(); n * c * tout * v];
    let mut arg = vec![0usize; out.len()];
    for q in 0..n * c {
        let base = q * t * v;
        for to in 0..tout {
            for vi in 0..v {
                let mut best = F::neg_infinity();
                let mut best_idx = usize::MAX;
                for j in 0..window {
                    if let Some(ti) = tap_frame(to, j, &geo, t) {
                        let idx = base + ti * v + vi;
                        if xd[idx] > best || best_idx == usize::MAX {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (q * tout + to) * v + vi;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    Ok((Tensor::new(&[n, c, tout, v], out)?, arg))
}

/// Per-channel statistics for batch normalization; channel axis is 1.
pub(crate) fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let rest: usize = shape[2..].iter().product();
    (n, c, rest)
}

pub(crate) fn channel_mean_var<F: Scalar>(x: &Tensor<F>) -> (Vec<F>, Vec<F>) {
    let (n, c, rest) = channel_layout(x.shape());
    let xd = x.data();
    let count = F::of((n * rest) as f64);
    let stats: Vec<(F, F)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = F::zero();
            for b in 0..n {
                sum = sum + xd[(b * c + ch) * rest..(b * c + ch + 1) * rest].iter().copied().sum::<F>();
            }
            let mean = sum / count;
            let mut sq = F::zero();
            for b in 0..n {
                sq = sq
                    + xd[(b * c + ch) * rest..(b * c + ch + 1) * rest]
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<F>();
            }
            (mean, sq / count)
        })
        .collect();
    stats.into_iter().unzip()
}

/// y = gamma * (x - mean) * inv_std + beta, per channel. Returns (y, xhat).
pub(crate) fn channel_affine<F: Scalar>(
    x: &Tensor<F>,
    mean: &[F],
    inv_std: &[F],
    gamma: &[F],
    beta: &[F],
) -> (Tensor<F>, Tensor<F>) {
    let (_, c, rest) = channel_layout(x.shape());
    let mut y = vec![F::zero(); x.numel()];
    let mut xhat = vec![F::zero(); x.numel()];
    let rest = rest.max(1);
    y.par_chunks_mut(rest)
        .zip(xhat.par_chunks_mut(rest))
        .zip(x.data().par_chunks(rest))
        .enumerate()
        .for_each(|(q, ((yc, hc), xc))| {
            let ch = q % c;
            for ((yv, hv), &xv) in yc.iter_mut().zip(hc.iter_mut()).zip(xc) {
                let h = (xv - mean[ch]) * inv_std[ch];
                *hv = h;
                *yv = gamma[ch] * h + beta[ch];
            }
        });
    (
        Tensor::new(x.shape(), y).expect("bn shape"),
        Tensor::new(x.shape(), xhat).expect("bn shape"),
    )
}

/// Per-channel sums of `g` and `g * xhat`.
pub(crate) fn channel_grad_sums<F: Scalar>(g: &Tensor<F>, xhat: &Tensor<F>) -> (Vec<F>, Vec<F>) {
    let (n, c, rest) = channel_layout(g.shape());
    let (gd, hd) = (g.data(), xhat.data());
    let sums: Vec<(F, F)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let (mut sg, mut sgh) = (F::zero(), F::zero());
            for b in 0..n {
                let r = (b * c + ch) * rest..(b * c + ch + 1) * rest;
                for (&gv, &hv) in gd[r.clone()].iter().zip(&hd[r]) {
                    sg = sg + gv;
                    sgh = sgh + gv * hv;
                }
            }
            (sg, sgh)
        })
        .collect();
    sums.into_iter().unzip()
}

/// Input gradient of training-mode batch normalization.
pub(crate) fn batch_norm_input_grad<F: Scalar>(
    g: &Tensor<F>,
    xhat: &Tensor<F>,
    gamma: &[F],
    inv_std: &[F],
    sum_g: &[F],
    sum_gh: &[F],
) -> Tensor<F> {
    let (n, c, rest) = channel_layout(g.shape());
    let m = F::of((n * rest) as f64);
    let mut dx = vec![F::zero(); g.numel()];
    let rest = rest.max(1);
    dx.par_chunks_mut(rest)
        .zip(g.data().par_chunks(rest))
        .zip(xhat.data().par_chunks(rest))
        .enumerate()
        .for_each(|(q, ((dc, gc), hc))| {
            let ch = q % c;
            let scale = gamma[ch] * inv_std[ch] / m;
            for ((d, &gv), &hv) in dc.iter_mut().zip(gc).zip(hc) {
                *d = scale * (m * gv - sum_g[ch] - hv * sum_gh[ch]);
            }
        });
    Tensor::new(g.shape(), dx).expect("bn dx shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn permute_transposes() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let p = permute(&a, &[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1., 4., 2., 5., 3., 6.]);
        let back = permute(&p, &inverse_permutation(&[1, 0])).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn permute_rank3_round_trip() {
        let a = t(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>());
        let axes = [2, 0, 1];
        let p = permute(&a, &axes).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), a.at(&[1, 2, 3]));
        assert_eq!(permute(&p, &inverse_permutation(&axes)).unwrap(), a);
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let a = t(&[2, 5], &(0..10).map(f64::from).collect::<Vec<_>>());
        let l = narrow(&a, 1, 0, 2).unwrap();
        let r = narrow(&a, 1, 2, 3).unwrap();
        assert_eq!(concat(&[&l, &r], 1).unwrap(), a);
    }

    #[test]
    fn conv_length_formula() {
        let geo = ConvGeometry {
            stride: 1,
            dilation: 4,
            padding: 4,
            groups: 1,
        };
        assert_eq!(geo.output_len(8, 3), Some(8));
        let strided = ConvGeometry { stride: 2, ..geo };
        assert_eq!(strided.output_len(150, 3), Some(75));
    }

    #[test]
    fn max_pool_picks_window_max() {
        let x = t(&[1, 1, 4, 1], &[1., 5., 2., 0.]);
        let (y, arg) = max_pool_temporal(&x, 3, 1, 1).unwrap();
        assert_eq!(y.data(), &[5., 5., 5., 2.]);
        assert_eq!(arg, vec![1, 1, 1, 2]);
    }
}
