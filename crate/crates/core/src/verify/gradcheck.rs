//! Central finite-difference gradient checks in 64-bit.
//!
//! The scalar being differentiated is `sum(output * R)` for a fixed random
//! `R`, so every output element contributes with a distinct weight.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-6;

/// Errors are measured per input tensor: the largest absolute difference
/// between analytic and numeric entries, divided by the largest gradient
/// magnitude in that tensor. Near-zero entries then carry the same absolute
/// round-off budget as the dominant ones instead of dividing by themselves.
/// The scale never drops below this floor, so a tensor whose true gradient is
/// zero (a softmax row shifted by a constant, say) is judged on its absolute
/// error rather than on finite-difference noise divided by itself.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries probed per input tensor; `None` probes all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input label, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    /// Fold in the probed entries `(index, analytic, numeric)` of one tensor.
    fn record(&mut self, label: &str, entries: &[(usize, f64, f64)]) {
        let scale = entries
            .iter()
            .map(|&(_, a, n)| a.abs().max(n.abs()))
            .fold(SCALE_FLOOR, f64::max);
        for &(index, a, n) in entries {
            let err = (a - n).abs() / scale;
            self.checked += 1;
            if err > self.max_rel_err || self.worst.is_none() {
                self.max_rel_err = self.max_rel_err.max(err);
                self.worst = Some((label.to_string(), index, a, n));
            }
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }
}

fn weights_for(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0e1);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("weights")
}

fn probe_indices(numel: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_entries {
        Some(m) if m < numel => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(31).wrapping_add(salt));
            let mut idx = sample(&mut rng, numel, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..numel).collect(),
    }
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    let axes: Vec<usize> = (0..tape.shape(prod).len()).collect();
    tape.sum(prod, &axes, false)
}

/// Check `build` against finite differences with respect to every input.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    mut build: impl FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let weights = weights_for(tape.shape(out), opts.seed);
    let loss = weighted_sum(&mut tape, out, &weights)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let loss = weighted_sum(&mut tape, out, &weights)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut entries = Vec::new();
        for idx in probe_indices(input.numel(), opts, k as u64) {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + opts.step;
            let up = eval(&work)?;
            work[k].data_mut()[idx] = orig - opts.step;
            let down = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            entries.push((idx, analytic[k].data()[idx], numeric));
        }
        report.record(&format!("input{k}"), &entries);
    }
    Ok(report)
}

/// Check parameter gradients of a loss built from a parameter store.
///
/// `build` must return a single-element loss and must not depend on state it
/// mutates (batch-norm running averages are fine: they do not feed the
/// training-mode output).
pub fn gradcheck_params(
    store: &ParamStore<f64>,
    mut build: impl FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss)?;
    let mut grads = store.clone();
    grads.zero_grad();
    tape.write_param_grads(&mut grads);

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        let name = store.get(id).name.clone();
        let mut entries = Vec::new();
        for idx in probe_indices(store.get(id).value.numel(), opts, k as u64) {
            let orig = store.get(id).value.data()[idx];
            work.get_mut(id).value.data_mut()[idx] = orig + opts.step;
            let mut t = Tape::new();
            let l = build(&mut t, &work)?;
            let up = t.value(l).item();
            work.get_mut(id).value.data_mut()[idx] = orig - opts.step;
            let mut t = Tape::new();
            let l = build(&mut t, &work)?;
            let down = t.value(l).item();
            work.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            entries.push((idx, grads.get(id).grad.data()[idx], numeric));
        }
        report.record(&name, &entries);
    }
    Ok(report)
}
