//! Binary checkpoints, little-endian.
//!
//! ```text
//! b"DSTSACKP" | u32 version=1 | u8 dtype (4 = f32, 8 = f64)
//! u32 len | config text (key=value lines)
//! u64 epoch | u32 entry count
//! entry: u8 kind | u32 len | name | u32 rank | rank x u64 dims | numel x dtype values
//! ```
//! Kinds: 0 parameter, 1 running mean, 2 running variance, 3 optimizer velocity,
//! 4 running-statistics update count (one element).

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamStore, RunningStats};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"DSTSACKP";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Param = 0,
    RunningMean = 1,
    RunningVar = 2,
    Velocity = 3,
    RunningCount = 4,
}

impl EntryKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Self::Param,
            1 => Self::RunningMean,
            2 => Self::RunningVar,
            3 => Self::Velocity,
            4 => Self::RunningCount,
            _ => return Err(Error::Integrity(format!("unknown checkpoint entry kind {b}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<F> {
    pub kind: EntryKind,
    pub name: String,
    pub tensor: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    /// Effective configuration that produced the state.
    pub config: String,
    /// Epochs completed.
    pub epoch: u64,
    pub entries: Vec<Entry<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn capture(
        config: String,
        epoch: u64,
        params: &ParamStore<F>,
        stats: &RunningStats<F>,
        velocity: Option<&[Tensor<F>]>,
    ) -> Self {
        let mut entries: Vec<Entry<F>> = params
            .iter()
            .map(|p| Entry {
                kind: EntryKind::Param,
                name: p.name.clone(),
                tensor: p.value.clone(),
            })
            .collect();
        for (name, s) in stats.iter() {
            let c = s.mean.len();
            entries.push(Entry {
                kind: EntryKind::RunningMean,
                name: name.to_string(),
                tensor: Tensor::new(&[c], s.mean.clone()).expect("stat shape"),
            });
            entries.push(Entry {
                kind: EntryKind::RunningVar,
                name: name.to_string(),
                tensor: Tensor::new(&[c], s.var.clone()).expect("stat shape"),
            });
            entries.push(Entry {
                kind: EntryKind::RunningCount,
                name: name.to_string(),
                tensor: Tensor::new(&[1], vec![F::of(s.updates as f64)]).expect("stat shape"),
            });
        }
        if let Some(vel) = velocity {
            for (p, v) in params.iter().zip(vel) {
                entries.push(Entry {
                    kind: EntryKind::Velocity,
                    name: p.name.clone(),
                    tensor: v.clone(),
                });
            }
        }
        Self { config, epoch, entries }
    }

    fn find(&self, kind: EntryKind, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|e| e.kind == kind && e.name == name).map(|e| &e.tensor)
    }

    fn expect(&self, kind: EntryKind, name: &str, shape: &[usize]) -> Result<&Tensor<F>> {
        let t = self
            .find(kind, name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks {kind:?} {name}")))?;
        if t.shape() != shape {
            return Err(Error::Integrity(format!(
                "checkpoint {kind:?} {name} has shape {:?}, model expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    /// Overwrite parameters and running statistics; every name must match.
    pub fn restore(&self, params: &mut ParamStore<F>, stats: &mut RunningStats<F>) -> Result<()> {
        let n_params = self.entries.iter().filter(|e| e.kind == EntryKind::Param).count();
        if n_params != params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {n_params} parameters, model has {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            p.value = self.expect(EntryKind::Param, &p.name, p.value.shape())?.clone();
        }
        for (name, s) in stats.iter_mut() {
            let c = s.mean.len();
            s.mean = self.expect(EntryKind::RunningMean, name, &[c])?.data().to_vec();
            s.var = self.expect(EntryKind::RunningVar, name, &[c])?.data().to_vec();
            s.updates = self.expect(EntryKind::RunningCount, name, &[1])?.item().as_f64() as u64;
        }
        Ok(())
    }

    /// Optimizer velocity in parameter order, if the checkpoint carries it.
    pub fn velocity(&self, params: &ParamStore<F>) -> Result<Option<Vec<Tensor<F>>>> {
        if !self.entries.iter().any(|e| e.kind == EntryKind::Velocity) {
            return Ok(None);
        }
        params
            .iter()
            .map(|p| self.expect(EntryKind::Velocity, &p.name, p.value.shape()).cloned())
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(F::DTYPE_TAG);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.push(e.kind as u8);
            put_str(&mut out, &e.name);
            out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in e.tensor.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Integrity("not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let tag = r.take(1)?[0];
        if tag != F::DTYPE_TAG {
            return Err(Error::Integrity(format!(
                "checkpoint holds {tag}-byte floats, expected {}",
                F::DTYPE_TAG
            )));
        }
        let config = r.string()?;
        let epoch = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let kind = EntryKind::from_byte(r.take(1)?[0])?;
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| Ok(u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Integrity(format!("entry {name} is too large")))?;
            let raw = r.take(numel.checked_mul(F::BYTES).ok_or_else(|| Error::Integrity("entry too large".into()))?)?;
            let data = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
            entries.push(Entry {
                kind,
                name,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        if r.pos != buf.len() {
            return Err(Error::Integrity("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, epoch, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("checkpoint string is not UTF-8".into()))
    }
}
