use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// SGD with (optionally Nesterov) momentum and L2 weight decay on eligible parameters.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: Vec<Tensor<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(params: &ParamStore<F>, momentum: f64, weight_decay: f64, nesterov: bool) -> Self {
        Self {
            momentum,
            weight_decay,
            nesterov,
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<F>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<F>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity.iter().zip(&self.velocity).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Integrity("optimizer state does not match the parameters".into()));
        }
        self.velocity = velocity;
        Ok(())
    }

    /// Apply one update from the gradients stored in `params`.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<F>, lr: f64) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
        let (mu, lr) = (F::of(self.momentum), F::of(lr));
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = F::of(if p.weight_decay { self.weight_decay } else { 0.0 });
            let grad = p.grad.data();
            let vel = v.data_mut();
            let val = p.value.data_mut();
            for ((x, vi), &g) in val.iter_mut().zip(vel.iter_mut()).zip(grad) {
                let g = g + wd * *x;
                *vi = mu * *vi + g;
                let update = if self.nesterov { g + mu * *vi } else { *vi };
                *x = *x - lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p), true).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = single(0.7, 0.0);
        Sgd::new(&s, 0.9, 0.0, true).step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.7);
    }

    #[test]
    fn vanilla_step() {
        let mut s = single(1.0, 1.0);
        Sgd::new(&s, 0.0, 0.0, true).step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.9);
    }

    #[test]
    fn nesterov_minimizes_quadratic() {
        let mut s = single(1.0, 0.0);
        let mut opt = Sgd::new(&s, 0.9, 0.0, true);
        for _ in 0..200 {
            let p = s.iter_mut().next().unwrap();
            p.grad = p.value.clone();
            opt.step(&mut s, 0.1).unwrap();
        }
        assert!(s.iter().next().unwrap().value.item().abs() < 1e-6);
    }

    #[test]
    fn weight_decay_respects_eligibility() {
        let mut s = ParamStore::<f64>::new();
        s.add("decayed", Tensor::scalar(1.0), true).unwrap();
        s.add("gate", Tensor::scalar(1.0), false).unwrap();
        Sgd::new(&s, 0.0, 0.5, false).step(&mut s, 0.1).unwrap();
        let v: Vec<f64> = s.iter().map(|p| p.value.item()).collect();
        assert_eq!(v, vec![0.95, 1.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut s = single(1.0, f64::NAN);
        let err = Sgd::new(&s, 0.9, 0.0, true).step(&mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.iter().next().unwrap().value.item(), 1.0);
    }
}
