//! Static adjacency banks and the per-sample dynamic topologies.
//!
//! All graphs act on row-vector features from the right: a frame `x` of
//! shape `(V,)` aggregates to `x A`, so `A[i, j]` carries joint `i` into joint `j`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::skeleton::GraphSpec;
use crate::tensor::{Scalar, Tensor};

/// Degree guard of [`normalize_adjacency`].
pub const NORM_EPS: f64 = 1e-4;

/// `D^-1/2 A D^-1/2` with `D_ii = sum_j A_ij + eps`.
pub fn normalize_adjacency<F: Scalar>(a: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape("normalize_adjacency", s, &[s[0], s[0]]));
    }
    let v = s[0];
    let d = a.data();
    let inv_sqrt: Vec<F> = (0..v)
        .map(|i| {
            let deg: F = d[i * v..(i + 1) * v].iter().copied().sum::<F>() + F::of(eps);
            if deg > F::zero() {
                F::one() / deg.sqrt()
            } else {
                F::zero()
            }
        })
        .collect();
    let mut out = a.clone();
    for i in 0..v {
        for j in 0..v {
            out.data_mut()[i * v + j] = inv_sqrt[i] * d[i * v + j] * inv_sqrt[j];
        }
    }
    Ok(out)
}

fn row_normalize(a: &mut [f64], v: usize) {
    for row in a.chunks_mut(v) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
}

/// Initialization of the static `(K, V, V)` bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StaticInit {
    /// i.i.d. uniform in `±1/sqrt(V)`.
    Random,
    /// `exp(-hops)` plus seeded noise of amplitude 1e-2 per group.
    Distance,
    /// Self, inward and outward incidence (K = 3).
    Spatial1,
    /// Root, centripetal and centrifugal partitions by root distance (K = 3).
    Spatial2,
}

impl StaticInit {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Distance => "distance",
            Self::Spatial1 => "spatial1",
            Self::Spatial2 => "spatial2",
        }
    }
}

impl fmt::Display for StaticInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StaticInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Random, Self::Distance, Self::Spatial1, Self::Spatial2]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown static topology init {s:?}")))
    }
}

pub const DISTANCE_NOISE: f64 = 1e-2;

/// Initial static bank of shape `(K, V, V)`.
pub fn init_static(strategy: StaticInit, graph: &GraphSpec, k: usize, seed: u64) -> Result<Tensor<f64>> {
    let v = graph.joint_count();
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if matches!(strategy, StaticInit::Spatial1 | StaticInit::Spatial2) && k != 3 {
        return Err(Error::Config(format!("{strategy} initialization needs K = 3, got K = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = vec![0.0; k * v * v];
    match strategy {
        StaticInit::Random => {
            let s = 1.0 / (v as f64).sqrt();
            bank.iter_mut().for_each(|x| *x = rng.random_range(-s..=s));
        }
        StaticInit::Distance => {
            for g in 0..k {
                for i in 0..v {
                    for j in 0..v {
                        let noise = rng.random_range(-DISTANCE_NOISE..=DISTANCE_NOISE);
                        bank[(g * v + i) * v + j] = (-(graph.hop_distance(i, j) as f64)).exp() + noise;
                    }
                }
            }
        }
        StaticInit::Spatial1 => {
            for i in 0..v {
                bank[i * v + i] = 1.0;
            }
            for &(c, p) in graph.edges() {
                bank[(v + c) * v + p] = 1.0;
                bank[(2 * v + p) * v + c] = 1.0;
            }
            for g in 1..3 {
                row_normalize(&mut bank[g * v * v..(g + 1) * v * v], v);
            }
        }
        StaticInit::Spatial2 => {
            let root = graph.root();
            for i in 0..v {
                for j in 0..v {
                    if graph.hop_distance(i, j) > 1 {
                        continue;
                    }
                    let (di, dj) = (graph.hop_distance(i, root), graph.hop_distance(j, root));
                    let part = match dj.cmp(&di) {
                        std::cmp::Ordering::Equal => 0,
                        std::cmp::Ordering::Less => 1,
                        std::cmp::Ordering::Greater => 2,
                    };
                    bank[(part * v + i) * v + j] = 1.0;
                }
            }
            for g in 0..3 {
                row_normalize(&mut bank[g * v * v..(g + 1) * v * v], v);
            }
        }
    }
    Tensor::new(&[k, v, v], bank)
}

/// Activation applied to feature differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Theta {
    Tanh,
    Relu,
    Sigmoid,
    /// Softmax over the target joint (last axis).
    Softmax,
}

impl Theta {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
        }
    }

    pub fn apply<F: Scalar>(self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        Ok(match self {
            Self::Tanh => tape.tanh(x),
            Self::Relu => tape.relu(x),
            Self::Sigmoid => tape.sigmoid(x),
            Self::Softmax => {
                let last = tape.shape(x).len() - 1;
                tape.softmax(x, last)?
            }
        })
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Tanh, Self::Relu, Self::Sigmoid, Self::Softmax]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown theta {s:?} (tanh, relu, sigmoid, softmax)")))
    }
}

/// `theta(u[..., i] - w[..., j])` for `u`, `w` of shape `(..., V)`: `(..., V, V)`.
pub fn pairwise_theta<F: Scalar>(tape: &mut Tape<F>, u: Var, w: Var, theta: Theta) -> Result<Var> {
    let su = tape.shape(u).to_vec();
    let mut col = su.clone();
    col.push(1);
    let mut row = tape.shape(w).to_vec();
    let v = row.pop().ok_or_else(|| Error::shape("pairwise_theta", &su, &[]))?;
    row.extend([1, v]);
    let uc = tape.reshape(u, &col)?;
    let wr = tape.reshape(w, &row)?;
    let d = tape.sub(uc, wr)?;
    theta.apply(tape, d)
}

/// Channel-wise dynamic graphs from mapped temporal-gated features
/// `u = Phi1(TGP(x))`, `w = Phi2(TGP(x))`, both `(N, C, V)`: `(N, C, V, V)`.
pub fn dynamic_channel_topology<F: Scalar>(tape: &mut Tape<F>, u: Var, w: Var, theta: Theta) -> Result<Var> {
    pairwise_theta(tape, u, w, theta)
}

/// `alpha * A_c + A[group(c)]` for `A_c: (N, C, V, V)`, bank `(K, V, V)`.
pub fn fuse_topology<F: Scalar>(tape: &mut Tape<F>, a_c: Var, alpha: Var, bank: Var) -> Result<Var> {
    let s = tape.shape(a_c).to_vec();
    let b = tape.shape(bank).to_vec();
    if s.len() != 4 || b.len() != 3 || b[1..] != s[2..] {
        return Err(Error::shape("fuse_topology", &s, &b));
    }
    let (n, c, v, k) = (s[0], s[1], s[2], b[0]);
    if k == 0 || c % k != 0 {
        return Err(Error::Config(format!("{c} channels do not split into {k} groups")));
    }
    let scaled = tape.mul(a_c, alpha)?;
    let grouped = tape.reshape(scaled, &[n, k, c / k, v, v])?;
    let bank = tape.reshape(bank, &[k, 1, v, v])?;
    let fused = tape.add(grouped, bank)?;
    tape.reshape(fused, &[n, c, v, v])
}

/// Temporal-wise dynamic graphs `(N, K, T, V, V)` from mapped per-group
/// channel-gated maps `z: (N, K, T, V)`.
pub fn dynamic_temporal_topology<F: Scalar>(tape: &mut Tape<F>, z: Var, theta: Theta) -> Result<Var> {
    pairwise_theta(tape, z, z, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        let i2 = Tensor::<f64>::eye(2);
        let n = normalize_adjacency(&i2, 1e-4).unwrap();
        assert!((n.at(&[0, 0]) - 1.0 / (1.0 + 1e-4)).abs() < 1e-15);
        let swap = Tensor::<f64>::from_f64(&[2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize_adjacency(&swap, 0.0).unwrap(), swap);
        let z = Tensor::<f64>::zeros(&[3, 3]);
        assert_eq!(normalize_adjacency(&z, 1e-4).unwrap(), z);
    }

    #[test]
    fn spatial_banks() {
        let g = GraphSpec::hand22();
        let a = init_static(StaticInit::Spatial1, &g, 3, 0).unwrap();
        for i in 0..22 {
            for j in 0..22 {
                assert_eq!(a.at(&[0, i, j]), if i == j { 1.0 } else { 0.0 });
            }
        }
        let b = init_static(StaticInit::Spatial2, &g, 3, 0).unwrap();
        // every joint sees itself in the root partition
        for i in 0..22 {
            assert!(b.at(&[0, i, i]) > 0.0);
        }
        assert!(init_static(StaticInit::Spatial1, &g, 8, 0).is_err());
    }

    #[test]
    fn distance_diagonal_near_one() {
        let g = GraphSpec::hand22();
        let a = init_static(StaticInit::Distance, &g, 4, 3).unwrap();
        for k in 0..4 {
            for i in 0..22 {
                assert!((a.at(&[k, i, i]) - 1.0).abs() <= DISTANCE_NOISE);
            }
        }
    }

    #[test]
    fn random_bank_is_seeded() {
        let g = GraphSpec::chain(5).unwrap();
        let a = init_static(StaticInit::Random, &g, 8, 11).unwrap();
        assert_eq!(a, init_static(StaticInit::Random, &g, 8, 11).unwrap());
        let s = 1.0 / 5f64.sqrt();
        assert!(a.data().iter().all(|x| x.abs() <= s));
    }

    #[test]
    fn tanh_of_unit_difference() {
        let mut tape = Tape::<f64>::new();
        let u = tape.leaf(Tensor::from_f64(&[1, 1, 2], &[1.0, 0.0]).unwrap());
        let w = tape.leaf(Tensor::from_f64(&[1, 1, 2], &[0.0, 0.0]).unwrap());
        let a = dynamic_channel_topology(&mut tape, u, w, Theta::Tanh).unwrap();
        assert!((tape.value(a).at(&[0, 0, 0, 1]) - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn fuse_requires_divisible_groups() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 6, 2, 2]));
        let alpha = tape.leaf(Tensor::scalar(1.0));
        let bank = tape.leaf(Tensor::zeros(&[4, 2, 2]));
        assert!(matches!(fuse_topology(&mut tape, a, alpha, bank), Err(Error::Config(_))));
    }
}
