//! Named learnable parameters and their gradient buffers.

use rand::Rng;

use crate::autodiff::BnRunning;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// Whether the L2 penalty applies. Off for gates, fusion scalars and normalization affine terms.
    pub weight_decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, weight_decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            weight_decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    weight_decay: p.weight_decay,
                })
                .collect(),
        }
    }
}

/// Batch-normalization running statistics, indexed by layer.
#[derive(Clone, Debug, Default)]
pub struct RunningStats<F> {
    entries: Vec<(String, BnRunning<F>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StatsId(usize);

impl<F: Scalar> RunningStats<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.entries.push((name.into(), BnRunning::new(channels)));
        StatsId(self.entries.len() - 1)
    }

    pub fn get(&self, id: StatsId) -> &BnRunning<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: StatsId) -> &mut BnRunning<F> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BnRunning<F>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut BnRunning<F>)> {
        self.entries.iter_mut().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<G: Scalar>(&self) -> RunningStats<G> {
        RunningStats {
            entries: self
                .entries
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        BnRunning {
                            mean: s.mean.iter().map(|v| G::of(v.as_f64())).collect(),
                            var: s.var.iter().map(|v| G::of(v.as_f64())).collect(),
                            updates: s.updates,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Uniform(-bound, bound) tensor.
pub fn uniform<F: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("uniform shape")
}

/// Fan-in scaled uniform init, bound 1/sqrt(fan_in).
pub fn fan_in_uniform<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<F> {
    uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.add("w", Tensor::zeros(&[2]), true).is_err());
        assert_eq!(s.numel(), 2);
    }

    #[test]
    fn scalar_params_are_rank_zero() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("alpha", Tensor::scalar(0.0), false).unwrap();
        assert_eq!(s.get(a).value.rank(), 0);
    }
}
