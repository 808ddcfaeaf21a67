use super::{Scalar, Tensor};

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Trailing-axis aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` seen through `out_shape`; broadcast axes get stride 0.
fn aligned_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let lead = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// A contiguous run of `len` output elements starting at `o`. Operand `a`
/// is read from `ia` advancing by `sa` per element (0 or 1), likewise `b`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Row {
    pub o: usize,
    pub ia: usize,
    pub ib: usize,
    pub sa: usize,
    pub sb: usize,
    pub len: usize,
}

/// Visit `out_shape` in row-major order as maximal rows. Unit axes are
/// dropped and adjacent axes merged wherever both operands stay affine.
pub(crate) fn for_each_row(out_shape: &[usize], a_shape: &[usize], b_shape: &[usize], mut f: impl FnMut(Row)) {
    if out_shape.contains(&0) {
        return;
    }
    let sa = aligned_strides(a_shape, out_shape);
    let sb = aligned_strides(b_shape, out_shape);
    // (extent, stride in a, stride in b), outermost first
    let mut dims: Vec<(usize, usize, usize)> = Vec::with_capacity(out_shape.len());
    for (i, &n) in out_shape.iter().enumerate() {
        if n == 1 {
            continue;
        }
        match dims.last_mut() {
            Some(last) if last.1 == sa[i] * n && last.2 == sb[i] * n => *last = (last.0 * n, sa[i], sb[i]),
            _ => dims.push((n, sa[i], sb[i])),
        }
    }
    let (len, row_sa, row_sb) = dims.pop().unwrap_or((1, 0, 0));
    let mut idx = vec![0usize; dims.len()];
    let (mut ia, mut ib, mut o) = (0usize, 0usize, 0usize);
    loop {
        f(Row { o, ia, ib, sa: row_sa, sb: row_sb, len });
        o += len;
        // odometer over the outer axes
        let mut axis = dims.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            let (n, da, db) = dims[axis];
            idx[axis] += 1;
            ia += da;
            ib += db;
            if idx[axis] < n {
                break;
            }
            ia -= da * n;
            ib -= db * n;
            idx[axis] = 0;
        }
    }
}

/// Visit every element of `out_shape` in row-major order together with the
/// matching offsets into two broadcast operands.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    for_each_row(out_shape, a_shape, b_shape, |r| {
        for i in 0..r.len {
            f(r.o + i, r.ia + i * r.sa, r.ib + i * r.sb);
        }
    });
}

/// Sum in eight interleaved lanes, folded in a fixed order.
#[inline]
pub(crate) fn lane_sum<F: Scalar>(xs: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (l, &x) in lanes.iter_mut().zip(c) {
            *l = *l + x;
        }
    }
    let head = lanes.iter().fold(F::zero(), |acc, &x| acc + x);
    tail.iter().fold(head, |acc, &x| acc + x)
}

/// Adds `src` into `dst`, where `dst` advances by `step` (0 or 1) per element.
#[inline]
pub(crate) fn accumulate_row<F: Scalar>(dst: &mut [F], step: usize, src: &[F]) {
    if step == 0 {
        dst[0] = dst[0] + lane_sum(src);
    } else {
        for (d, &x) in dst[..src.len()].iter_mut().zip(src) {
            *d = *d + x;
        }
    }
}

/// Sum `t` down to `target`, the shape it was broadcast from.
pub(crate) fn reduce_to_shape<F: Scalar>(t: &Tensor<F>, target: &[usize]) -> Tensor<F> {
    if t.shape() == target {
        return t.clone();
    }
    let mut out = Tensor::zeros(target);
    let src = t.data();
    let dst = out.data_mut();
    for_each_row(t.shape(), target, &[], |r| {
        accumulate_row(&mut dst[r.ia..], r.sa, &src[r.o..r.o + r.len]);
    });
    out
}
