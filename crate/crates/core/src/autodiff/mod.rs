//! Reverse-mode differentiation over whole-tensor operations.
//!
//! A [`Tape`] is built fresh for every forward pass. Each call appends a node
//! holding its forward value; [`Tape::backward`] walks the nodes in reverse
//! insertion order (a valid topological order by construction) and adds the
//! resulting adjoints into the persistent gradients of leaf nodes.

mod ops;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub use crate::tensor::kernels::ConvGeometry;

static FLIP_TANH_BACKWARD: AtomicBool = AtomicBool::new(false);

/// Mutation hook for the verification suite: negates the tanh derivative.
/// Process-global; only meant for a dedicated verification process.
pub fn inject_tanh_backward_sign_flip(enabled: bool) {
    FLIP_TANH_BACKWARD.store(enabled, Ordering::SeqCst);
}

pub(crate) fn tanh_backward_flipped() -> bool {
    FLIP_TANH_BACKWARD.load(Ordering::Relaxed)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    /// x * clamp(x + 3, 0, 6) / 6
    Hardswish,
    Scale(f64),
}

pub(crate) enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Softmax(Var, usize),
    /// keep-dim sum; the reduced axes have extent 1 in the output
    Sum(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Conv(Var, Var, ConvGeometry),
    MaxPool(Var, Vec<usize>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<F>,
    },
}

pub(crate) struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Running statistics owned by one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    /// Training batches folded in so far.
    pub updates: u64,
}

impl<F: Scalar> BnRunning<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
            updates: 0,
        }
    }

    /// Weight of the next batch: a plain average over the first batches, so
    /// the placeholder initial values never linger, then an exponential one.
    pub fn blend_rate(&self) -> f64 {
        (1.0 / (self.updates + 1) as f64).max(1.0 - BN_MOMENTUM)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
    param_leaves: HashMap<ParamId, Var>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).value.clone());
        self.nodes[v.0].param = Some(id);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Clear accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Gradients of parameter leaves, keyed by parameter.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> + '_ {
        self.param_leaves
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// Add parameter-leaf gradients into the store's gradient buffers.
    pub fn write_param_grads(&self, store: &mut ParamStore<F>) {
        let mut ids: Vec<_> = self.param_grads().collect();
        ids.sort_by_key(|(id, _)| *id);
        for (id, g) in ids {
            store.get_mut(id).grad.add_assign(g);
        }
    }

    /// Backpropagate from a single-element output.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward (needs scalar root)", &shape, &[1]));
        }
        self.backward_with(root, Tensor::ones(&shape))
    }

    /// Backpropagate an explicit output adjoint.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<F>) -> Result<()> {
        if seed.shape() != self.shape(root) {
            return Err(Error::shape("backward seed", seed.shape(), self.shape(root)));
        }
        let mut local: Vec<Option<Tensor<F>>> = (0..=root.0).map(|_| None).collect();
        local[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (parent, pg) in self.node_backward(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut local[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}
