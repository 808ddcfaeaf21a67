use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GraphSpec;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One recorded gesture: world coordinates `(3, T, V)` plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub coords: Tensor<f64>,
    /// 0-based 14-class label.
    pub label14: usize,
    /// 0-based 28-class label.
    pub label28: usize,
    pub subject: u32,
    pub trial: u32,
}

impl SkeletonSequence {
    pub fn new(coords: Tensor<f64>, label14: usize, label28: usize, subject: u32, trial: u32) -> Result<Self> {
        let s = coords.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::shape("skeleton sequence", s, &[3, 0, 0]));
        }
        if s[1] < 2 {
            return Err(Error::Input(format!("sequence needs at least 2 frames, got {}", s[1])));
        }
        if !coords.is_finite() {
            return Err(Error::Integrity("non-finite joint coordinate".into()));
        }
        Ok(Self {
            coords,
            label14,
            label28,
            subject,
            trial,
        })
    }

    pub fn frames(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[2]
    }

    /// Which label scheme to train against.
    pub fn label(&self, scheme28: bool) -> usize {
        if scheme28 {
            self.label28
        } else {
            self.label14
        }
    }

    /// Copy with frames picked by `indices`.
    pub fn select_frames(&self, indices: &[usize]) -> Self {
        let (t, v) = (self.frames(), self.joints());
        let src = self.coords.data();
        let mut data = Vec::with_capacity(3 * indices.len() * v);
        for c in 0..3 {
            for &i in indices {
                let off = (c * t + i) * v;
                data.extend_from_slice(&src[off..off + v]);
            }
        }
        Self {
            coords: Tensor::new(&[3, indices.len(), v], data).expect("frame selection"),
            ..self.clone()
        }
    }
}

/// Input stream derived from raw joints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModalityKind {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 4] = [Self::Joint, Self::Bone, Self::JointMotion, Self::BoneMotion];

    pub fn name(self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Bone => "bone",
            Self::JointMotion => "joint_motion",
            Self::BoneMotion => "bone_motion",
        }
    }

    /// Channels `(3, T, V)` fed to the network.
    pub fn derive(self, seq: &SkeletonSequence, graph: &GraphSpec) -> Result<Tensor<f64>> {
        match self {
            Self::Joint => Ok(seq.coords.clone()),
            Self::Bone => derive_bone(&seq.coords, graph),
            Self::JointMotion => derive_motion(&seq.coords),
            Self::BoneMotion => derive_motion(&derive_bone(&seq.coords, graph)?),
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?} (joint, bone, joint_motion, bone_motion)")))
    }
}

/// Parent-relative vectors; the root bone is zero.
pub fn derive_bone(coords: &Tensor<f64>, graph: &GraphSpec) -> Result<Tensor<f64>> {
    let s = coords.shape();
    if s.len() != 3 || s[2] != graph.joint_count() {
        return Err(Error::shape("derive_bone", s, &[3, 0, graph.joint_count()]));
    }
    let v = s[2];
    let src = coords.data();
    let mut out = vec![0.0; src.len()];
    for (row_out, row) in out.chunks_mut(v).zip(src.chunks(v)) {
        for j in 0..v {
            if let Some(p) = graph.parent(j) {
                row_out[j] = row[j] - row[p];
            }
        }
    }
    Tensor::new(s, out)
}

/// Inverse of [`derive_bone`] given the root trajectory: prefix sums down the tree.
pub fn reconstruct_from_bones(bones: &Tensor<f64>, root: &[f64], graph: &GraphSpec) -> Tensor<f64> {
    let s = bones.shape();
    let v = s[2];
    let order = graph.topological_order();
    let mut out = vec![0.0; bones.numel()];
    for (r, (row_out, row)) in out.chunks_mut(v).zip(bones.data().chunks(v)).enumerate() {
        for &j in &order {
            row_out[j] = match graph.parent(j) {
                Some(p) => row_out[p] + row[j],
                None => root[r],
            };
        }
    }
    Tensor::new(s, out).expect("same shape")
}

/// Frame-to-frame differences along axis 1; frame 0 is zero.
pub fn derive_motion(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("derive_motion", s, &[3, 0, 0]));
    }
    if s[1] < 2 {
        return Err(Error::Input(format!("motion needs at least 2 frames, got {}", s[1])));
    }
    let (t, v) = (s[1], s[2]);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for c in 0..s[0] {
        for ti in 1..t {
            let cur = (c * t + ti) * v;
            let prev = cur - v;
            for j in 0..v {
                out[cur + j] = src[cur + j] - src[prev + j];
            }
        }
    }
    Tensor::new(s, out)
}

/// Subtract the root position of frame 0 from every frame.
pub fn center_on_root(seq: &mut SkeletonSequence, graph: &GraphSpec) {
    let (t, v) = (seq.frames(), seq.joints());
    let root = graph.root();
    let data = seq.coords.data_mut();
    for c in 0..3 {
        let origin = data[c * t * v + root];
        for x in &mut data[c * t * v..(c + 1) * t * v] {
            *x -= origin;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Evenly spaced, deterministic.
    Uniform,
    /// One seeded draw from each of `target` equal-width bins.
    Random,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

/// Frame indices drawn from a `t`-frame sequence.
pub fn sample_indices(t: usize, target: usize, mode: SampleMode, seed: u64) -> Vec<usize> {
    assert!(t >= 1 && target >= 1);
    match mode {
        SampleMode::Uniform if target == 1 => vec![0],
        SampleMode::Uniform => {
            let step = (t - 1) as f64 / (target - 1) as f64;
            (0..target).map(|i| (i as f64 * step).round() as usize).collect()
        }
        SampleMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let width = t as f64 / target as f64;
            (0..target)
                .map(|i| {
                    let lo = (i as f64 * width).floor() as usize;
                    // disjoint bins; a bin narrower than one frame holds its first frame
                    let hi = (((i + 1) as f64 * width).floor() as usize).clamp(lo + 1, t);
                    rng.random_range(lo..hi)
                })
                .collect()
        }
    }
}

/// Resample a sequence to `target` frames; short sequences repeat frames.
pub fn sample_frames(seq: &SkeletonSequence, target: usize, mode: SampleMode, seed: u64) -> SkeletonSequence {
    seq.select_frames(&sample_indices(seq.frames(), target, mode, seed))
}

/// Stack `(3, T, V)` tensors into a `(N, 3, T, V)` batch.
pub fn stack_batch<F: Scalar>(items: &[&Tensor<f64>]) -> Result<Tensor<F>> {
    let first = items.first().ok_or_else(|| Error::Input("empty batch".into()))?.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * first.iter().product::<usize>());
    for it in items {
        if it.shape() != first.as_slice() {
            return Err(Error::shape("stack_batch", &first, it.shape()));
        }
        data.extend(it.data().iter().map(|&x| F::of(x)));
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(&first);
    Tensor::new(&shape, data)
}
