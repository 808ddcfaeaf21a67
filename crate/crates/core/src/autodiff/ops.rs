use super::{tanh_backward_flipped, BnRunning, ConvGeometry, Op, Tape, Unary, Var, BN_EPS};
use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{accumulate_row, broadcast_shape, for_each_row, reduce_to_shape, Scalar, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary_values<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, kind: Binary, name: &'static str) -> Result<Tensor<F>> {
    // one monomorphized kernel per operator keeps the row loops vectorizable
    match kind {
        Binary::Add => binary_with(a, b, name, |x, y| x + y),
        Binary::Sub => binary_with(a, b, name, |x, y| x - y),
        Binary::Mul => binary_with(a, b, name, |x, y| x * y),
    }
}

fn binary_with<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, name: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
    let mut out = vec![F::zero(); shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_row(&shape, a.shape(), b.shape(), |r| {
        let dst = &mut out[r.o..r.o + r.len];
        match (r.sa, r.sb) {
            (1, 1) => {
                let (x, y) = (&ad[r.ia..r.ia + r.len], &bd[r.ib..r.ib + r.len]);
                for ((o, &x), &y) in dst.iter_mut().zip(x).zip(y) {
                    *o = f(x, y);
                }
            }
            (1, _) => {
                let y = bd[r.ib];
                for (o, &x) in dst.iter_mut().zip(&ad[r.ia..r.ia + r.len]) {
                    *o = f(x, y);
                }
            }
            (_, 1) => {
                let x = ad[r.ia];
                for (o, &y) in dst.iter_mut().zip(&bd[r.ib..r.ib + r.len]) {
                    *o = f(x, y);
                }
            }
            _ => dst.fill(f(ad[r.ia], bd[r.ib])),
        }
    });
    Tensor::new(&shape, out)
}

fn hardswish<F: Scalar>(x: F) -> F {
    let three = F::of(3.0);
    let six = F::of(6.0);
    x * (x + three).max(F::zero()).min(six) / six
}

fn hardswish_grad<F: Scalar>(x: F) -> F {
    let three = F::of(3.0);
    if x < -three {
        F::zero()
    } else if x > three {
        F::one()
    } else {
        (x + x + three) / F::of(6.0)
    }
}

impl<F: Scalar> Tape<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_values(self.value(a), self.value(b), Binary::Add, "add")?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_values(self.value(a), self.value(b), Binary::Sub, "sub")?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary_values(self.value(a), self.value(b), Binary::Mul, "mul")?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let v = match kind {
            Unary::Tanh => self.value(x).map(F::fast_tanh),
            Unary::Sigmoid => self.value(x).map(|z| F::one() / (F::one() + (-z).exp())),
            Unary::Relu => self.value(x).map(|z| z.max(F::zero())),
            Unary::Hardswish => self.value(x).map(hardswish),
            Unary::Scale(c) => {
                let c = F::of(c);
                self.value(x).map(|z| z * c)
            }
        };
        self.push_op(v, Op::Unary(x, kind), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn hardswish(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Hardswish)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    /// Matrix product over the last two axes, broadcasting leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(x), axis)?;
        Ok(self.push_op(v, Op::Softmax(x, axis), &[x]))
    }

    /// Sum over `axes`. With `keepdim == false` the reduced axes are removed.
    pub fn sum(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let v = kernels::sum_axes(self.value(x), axes)?;
        let kept = self.push_op(v, Op::Sum(x), &[x]);
        if keepdim {
            return Ok(kept);
        }
        let squeezed: Vec<usize> = self
            .shape(x)
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &n)| n)
            .collect();
        self.reshape(kept, &squeezed)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let count: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.sum(x, axes, keepdim)?;
        Ok(self.scale(s, 1.0 / count.max(1) as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push_op(v, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(x), axes)?;
        Ok(self.push_op(v, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<F>> = xs.iter().map(|&x| self.value(x)).collect();
        let v = kernels::concat(&parts, axis)?;
        Ok(self.push_op(v, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(x), axis, start, len)?;
        Ok(self.push_op(v, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Convolution along the frame axis of `(N, C_in, T, V)` with kernel `(C_out, C_in/groups, k)`.
    pub fn conv_temporal(&mut self, x: Var, kernel: Var, geo: ConvGeometry) -> Result<Var> {
        let v = kernels::conv_temporal(self.value(x), self.value(kernel), &geo)?;
        Ok(self.push_op(v, Op::Conv(x, kernel, geo), &[x, kernel]))
    }

    pub fn max_pool_temporal(&mut self, x: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        let (v, arg) = kernels::max_pool_temporal(self.value(x), window, stride, padding)?;
        Ok(self.push_op(v, Op::MaxPool(x, arg), &[x]))
    }

    /// Per-channel normalization over every axis except 1.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning<F>,
        train: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", &shape, &[]));
        }
        let c = shape[1];
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || running.mean.len() != c {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let eps = F::of(BN_EPS);
        let (mean, inv_std) = if train {
            let (mean, var) = kernels::channel_mean_var(self.value(x));
            let count = shape[0] * shape[2..].iter().product::<usize>();
            let r = F::of(running.blend_rate());
            let unbias = if count > 1 {
                F::of(count as f64 / (count - 1) as f64)
            } else {
                F::one()
            };
            for ch in 0..c {
                running.mean[ch] = (F::one() - r) * running.mean[ch] + r * mean[ch];
                running.var[ch] = (F::one() - r) * running.var[ch] + r * var[ch] * unbias;
            }
            running.updates += 1;
            let inv: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        } else {
            let inv: Vec<F> = running.var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
            (running.mean.clone(), inv)
        };
        let (y, xhat) = kernels::channel_affine(
            self.value(x),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push_op(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`), logits `(N, K)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let probs = kernels::softmax(self.value(logits), 1)?;
        let n = F::of(labels.len() as f64);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs.data()[i * k + l].max(F::min_positive_value())).ln())
            .sum::<F>()
            / n;
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Adjoints of node `i`'s parents given the node's output adjoint `g`.
    pub(super) fn node_backward(&self, i: usize, g: &Tensor<F>) -> Vec<(Var, Tensor<F>)> {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(*a) {
                    out.push((*a, reduce_to_shape(g, self.shape(*a))));
                }
                if want(*b) {
                    out.push((*b, reduce_to_shape(g, self.shape(*b))));
                }
                out
            }
            Op::Sub(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(*a) {
                    out.push((*a, reduce_to_shape(g, self.shape(*a))));
                }
                if want(*b) {
                    out.push((*b, reduce_to_shape(g, self.shape(*b)).map(|v| -v)));
                }
                out
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if av.shape() == bv.shape() {
                    let mut out = Vec::with_capacity(2);
                    if want(*a) {
                        let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                        out.push((*a, Tensor::new(av.shape(), d).expect("shape")));
                    }
                    if want(*b) {
                        let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                        out.push((*b, Tensor::new(bv.shape(), d).expect("shape")));
                    }
                    return out;
                }
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                {
                    let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                    let (gad, gbd) = (ga.data_mut(), gb.data_mut());
                    let mut prod = Vec::new();
                    for_each_row(g.shape(), av.shape(), bv.shape(), |r| {
                        let gr = &gd[r.o..r.o + r.len];
                        // adjoint of one operand: g times the other, summed where this one broadcasts
                        let mut side = |other: &[F], io: usize, so: usize, dst: &mut [F], step: usize| {
                            prod.clear();
                            if so == 0 {
                                prod.extend(gr.iter().map(|&x| x * other[io]));
                            } else {
                                prod.extend(gr.iter().zip(&other[io..io + r.len]).map(|(&x, &y)| x * y));
                            }
                            accumulate_row(dst, step, &prod);
                        };
                        if want(*a) {
                            side(bd, r.ib, r.sb, &mut gad[r.ia..], r.sa);
                        }
                        if want(*b) {
                            side(ad, r.ia, r.sa, &mut gbd[r.ib..], r.sb);
                        }
                    });
                }
                let mut out = Vec::with_capacity(2);
                if want(*a) {
                    out.push((*a, ga));
                }
                if want(*b) {
                    out.push((*b, gb));
                }
                out
            }
            Op::Unary(x, kind) => {
                let y = &node.value;
                let xv = self.value(*x);
                let d: Vec<F> = match kind {
                    Unary::Tanh => {
                        let sign = if tanh_backward_flipped() { -F::one() } else { F::one() };
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| sign * gv * (F::one() - yv * yv))
                            .collect()
                    }
                    Unary::Sigmoid => g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (F::one() - yv))
                        .collect(),
                    Unary::Relu => g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                        .collect(),
                    Unary::Hardswish => g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &xv)| gv * hardswish_grad(xv))
                        .collect(),
                    Unary::Scale(c) => {
                        let c = F::of(*c);
                        g.data().iter().map(|&gv| gv * c).collect()
                    }
                };
                vec![(*x, Tensor::new(xv.shape(), d).expect("shape"))]
            }
            Op::MatMul(a, b) => {
                let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), g, want(*a), want(*b));
                ga.map(|t| (*a, t)).into_iter().chain(gb.map(|t| (*b, t))).collect()
            }
            Op::Softmax(x, axis) => vec![(*x, kernels::softmax_backward(&node.value, g, *axis))],
            Op::Sum(x) => vec![(*x, kernels::expand_to(g, self.shape(*x)))],
            Op::Reshape(x) => vec![(*x, g.clone().with_shape(self.shape(*x)))],
            Op::Permute(x, axes) => {
                let inv = kernels::inverse_permutation(axes);
                vec![(*x, kernels::permute(g, &inv).expect("inverse permutation"))]
            }
            Op::Concat(xs, axis) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if want(x) {
                        out.push((x, kernels::narrow(g, *axis, start, len).expect("concat slice")));
                    }
                    start += len;
                }
                out
            }
            Op::Narrow { x, axis, start } => {
                vec![(*x, kernels::narrow_backward(g, self.shape(*x), *axis, *start))]
            }
            Op::Conv(x, w, geo) => {
                let (gx, gw) =
                    kernels::conv_temporal_backward(self.value(*x), self.value(*w), g, geo, want(*x), want(*w));
                gx.map(|t| (*x, t)).into_iter().chain(gw.map(|t| (*w, t))).collect()
            }
            Op::MaxPool(x, arg) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let d = gx.data_mut();
                for (&src, &gv) in arg.iter().zip(g.data()) {
                    d[src] = d[src] + gv;
                }
                vec![(*x, gx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (sum_g, sum_gh) = kernels::channel_grad_sums(g, xhat);
                let c = sum_g.len();
                let mut out = Vec::with_capacity(3);
                if want(*gamma) {
                    out.push((*gamma, Tensor::new(self.shape(*gamma), sum_gh.clone()).expect("gamma")));
                }
                if want(*beta) {
                    out.push((*beta, Tensor::new(self.shape(*beta), sum_g.clone()).expect("beta")));
                }
                if want(*x) {
                    let gam = self.value(*gamma).data();
                    let gx = if *train {
                        kernels::batch_norm_input_grad(g, xhat, gam, inv_std, &sum_g, &sum_gh)
                    } else {
                        let rest: usize = g.shape()[2..].iter().product();
                        let mut d = g.clone();
                        for (q, chunk) in d.data_mut().chunks_mut(rest.max(1)).enumerate() {
                            let ch = q % c;
                            let s = gam[ch] * inv_std[ch];
                            chunk.iter_mut().for_each(|v| *v = *v * s);
                        }
                        d
                    };
                    out.push((*x, gx));
                }
                out
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.shape()[1];
                let scale = g.item() / F::of(labels.len() as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    let v = &mut d.data_mut()[i * k + l];
                    *v = *v - F::one();
                }
                d.data_mut().iter_mut().for_each(|v| *v = *v * scale);
                vec![(*logits, d)]
            }
        }
    }
}
