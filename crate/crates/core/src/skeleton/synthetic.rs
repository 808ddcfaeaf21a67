//! Seeded synthetic gestures and their binary container.
//!
//! Each class moves one joint group (a finger on the hand, a residue class of
//! joints on other trees) sinusoidally along one axis with an integer number
//! of cycles over the clip. Because the cycles are whole, every class has the
//! same time-averaged pose: only the motion tells classes apart.
//!
//! Container layout, little-endian:
//!
//! ```text
//! b"DSTSASYN" | u32 version=1 | u32 V | u32 T | u32 C0=3 | u32 count
//! count x ( u32 label14 | u32 label28 | u32 subject | u32 trial | 3*T*V f64, (c, t, v) order )
//! ```

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GraphSpec, SkeletonSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NOISE_SIGMA: f64 = 0.01;
const AMPLITUDE: f64 = 0.1;
const MAGIC: &[u8; 8] = b"DSTSASYN";
const VERSION: u32 = 1;

/// Parametric motion family of one class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassMotion {
    pub group: usize,
    pub axis: usize,
    pub cycles: usize,
}

fn group_count(v: usize) -> usize {
    if v == 22 {
        5
    } else {
        (v - 1).clamp(1, 5)
    }
}

/// Group of joint `j`, or `None` for joints that stay still.
fn joint_group(j: usize, v: usize) -> Option<(usize, usize)> {
    if v == 22 {
        // (finger, depth along the finger)
        (j >= 2).then(|| if j < 6 { (0, j - 2) } else { (1 + (j - 6) / 4, (j - 6) % 4) })
    } else {
        let g = group_count(v);
        (j >= 1).then(|| ((j - 1) % g, (j - 1) / g))
    }
}

pub fn class_motion(class: usize, v: usize) -> ClassMotion {
    let g = group_count(v);
    ClassMotion {
        group: class % g,
        axis: (class / g) % 3,
        cycles: 1 + (class / (3 * g)) % 2,
    }
}

fn rest_pose(graph: &GraphSpec) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a0d);
    let mut pose = vec![[0.0; 3]; graph.joint_count()];
    for j in graph.topological_order() {
        if let Some(p) = graph.parent(j) {
            let d = [
                rng.random_range(-0.01..0.01),
                0.025 + rng.random_range(0.0..0.01),
                rng.random_range(-0.01..0.01),
            ];
            pose[j] = [pose[p][0] + d[0], pose[p][1] + d[1], pose[p][2] + d[2]];
        }
    }
    pose
}

/// `classes * per_class` sequences of shape `(3, T, V)`, grouped by class.
pub fn generate_synthetic(classes: usize, per_class: usize, v: usize, t: usize, seed: u64) -> Result<Vec<SkeletonSequence>> {
    if classes < 2 {
        return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {classes}")));
    }
    if t < 2 || v < 2 {
        return Err(Error::Config(format!("synthetic data needs T >= 2 and V >= 2, got T={t}, V={v}")));
    }
    let graph = GraphSpec::for_joints(v)?;
    let rest = rest_pose(&graph);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let motion = class_motion(class, v);
        for s in 0..per_class {
            let phase = rng.random_range(0.0..TAU);
            let amp = AMPLITUDE * rng.random_range(0.8..1.2);
            let offset: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.02..0.02));
            let mut data = vec![0.0; 3 * t * v];
            for c in 0..3 {
                for ti in 0..t {
                    let wave = (TAU * motion.cycles as f64 * ti as f64 / t as f64 + phase).sin();
                    for j in 0..v {
                        let mut x = rest[j][c] + offset[c];
                        if c == motion.axis {
                            if let Some((g, depth)) = joint_group(j, v) {
                                if g == motion.group {
                                    x += amp * (depth + 1) as f64 / 4.0 * wave;
                                }
                            }
                        }
                        data[(c * t + ti) * v + j] = x + noise.sample(&mut rng);
                    }
                }
            }
            out.push(SkeletonSequence::new(
                Tensor::new(&[3, t, v], data)?,
                class,
                class,
                s as u32,
                0,
            )?);
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

/// Serialize equal-shape sequences.
pub fn encode_container(seqs: &[SkeletonSequence]) -> Result<Vec<u8>> {
    let first = seqs.first().ok_or_else(|| Error::Input("no sequences to write".into()))?;
    let (t, v) = (first.frames(), first.joints());
    let mut out = Vec::with_capacity(28 + seqs.len() * (16 + 24 * t * v));
    out.extend_from_slice(MAGIC);
    for x in [VERSION, v as u32, t as u32, 3, seqs.len() as u32] {
        put_u32(&mut out, x);
    }
    for s in seqs {
        if (s.frames(), s.joints()) != (t, v) {
            return Err(Error::shape("container", &[3, t, v], s.coords.shape()));
        }
        for x in [s.label14 as u32, s.label28 as u32, s.subject, s.trial] {
            put_u32(&mut out, x);
        }
        for &x in s.coords.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Integrity(format!("container truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_container(buf: &[u8]) -> Result<Vec<SkeletonSequence>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Integrity("not a synthetic skeleton container".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Integrity(format!("unsupported container version {version}")));
    }
    let (v, t, c0, count) = (r.u32()? as usize, r.u32()? as usize, r.u32()?, r.u32()? as usize);
    if c0 != 3 {
        return Err(Error::Integrity(format!("expected 3 coordinate channels, found {c0}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (l14, l28, subject, trial) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let raw = r.take(8 * 3 * t * v)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        out.push(SkeletonSequence::new(
            Tensor::new(&[3, t, v], data)?,
            l14 as usize,
            l28 as usize,
            subject,
            trial,
        )?);
    }
    if r.pos != buf.len() {
        return Err(Error::Integrity("trailing bytes after container".into()));
    }
    Ok(out)
}

pub fn save_container(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    std::fs::write(path, encode_container(seqs)?).map_err(|e| Error::io(path, e))
}

pub fn load_container(path: &Path) -> Result<Vec<SkeletonSequence>> {
    decode_container(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_histogram_is_balanced() {
        let data = generate_synthetic(4, 16, 22, 30, 7).unwrap();
        assert_eq!(data.len(), 64);
        let mut hist = [0; 4];
        for s in &data {
            hist[s.label14] += 1;
        }
        assert_eq!(hist, [16; 4]);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            generate_synthetic(3, 2, 22, 12, 9).unwrap(),
            generate_synthetic(3, 2, 22, 12, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(3, 2, 22, 12, 9).unwrap(),
            generate_synthetic(3, 2, 22, 12, 10).unwrap()
        );
    }

    #[test]
    fn container_round_trip_is_exact() {
        let data = generate_synthetic(2, 3, 6, 5, 1).unwrap();
        let bytes = encode_container(&data).unwrap();
        assert_eq!(decode_container(&bytes).unwrap(), data);
        assert!(decode_container(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_container(&bad).is_err());
    }

    #[test]
    fn classes_use_distinct_motion() {
        let families: Vec<_> = (0..15).map(|c| class_motion(c, 22)).collect();
        for i in 0..15 {
            for j in 0..i {
                assert_ne!(families[i], families[j]);
            }
        }
    }
}
