//! Binary checkpoint container.
//!
//! All integers and floats are little-endian. Layout, version 1:
//!
//! ```text
//! magic      8 bytes   "PPGCKPT\0"
//! version    u32       1
//! precision  u8        4 (f32) or 8 (f64), width of every tensor element
//! counters   u32 n, then n x { name: str, value: u64 }
//! groups     u32 n, then n x group
//!
//! group:
//!   name     str
//!   tensors  u32 n, then n x { name: str, ndim: u32, dims: ndim x u64,
//!                               values: prod(dims) x element }
//!   adam     u8 0 | 1; when 1:
//!            t: u64, beta1: f64, beta2: f64, eps: f64,
//!            then per tensor { steps: u64, m: values, v: values }
//!
//! str = u32 byte length + UTF-8 bytes
//! ```

use std::path::Path;

use crate::nn::{AdamConfig, AdamState, NnError, ParameterSet};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"PPGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointGroup<T> {
    pub name: String,
    pub params: ParameterSet<T>,
    pub adam: Option<AdamState<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub counters: Vec<(String, u64)>,
    pub groups: Vec<CheckpointGroup<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn group(&self, name: &str) -> Option<&CheckpointGroup<T>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::BYTES);
        out.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (name, v) in &self.counters {
            put_str(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            put_str(&mut out, &g.name);
            let tensors = g.params.tensors();
            out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
            for t in tensors {
                put_str(&mut out, &t.name);
                out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
                for &d in &t.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                t.value.iter().for_each(|v| v.write_le(&mut out));
            }
            match &g.adam {
                None => out.push(0),
                Some(a) => {
                    out.push(1);
                    out.extend_from_slice(&a.t.to_le_bytes());
                    for x in [a.config.beta1, a.config.beta2, a.config.eps] {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                    for i in 0..tensors.len() {
                        out.extend_from_slice(&a.tensor_steps[i].to_le_bytes());
                        a.m[i].iter().for_each(|v| v.write_le(&mut out));
                        a.v[i].iter().for_each(|v| v.write_le(&mut out));
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let prec = r.take(1)?[0];
        if prec != T::BYTES {
            return Err(NnError::Checkpoint(format!(
                "precision mismatch: file has {prec}-byte reals, expected {}",
                T::BYTES
            )));
        }
        let mut counters = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            counters.push((name, r.u64()?));
        }
        let mut groups = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let mut params = ParameterSet::new();
            for _ in 0..r.u32()? {
                let tname = r.str()?;
                let ndim = r.u32()? as usize;
                let shape = (0..ndim)
                    .map(|_| r.u64().map(|d| d as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                let n = shape.iter().product();
                let value = r.reals::<T>(n)?;
                params.add(tname, shape, value);
            }
            let adam = match r.take(1)?[0] {
                0 => None,
                1 => {
                    let t = r.u64()?;
                    let config = AdamConfig {
                        beta1: r.f64()?,
                        beta2: r.f64()?,
                        eps: r.f64()?,
                    };
                    let mut a = AdamState::new(&params, config);
                    a.t = t;
                    for i in 0..params.len() {
                        let n = params.tensor(i).len();
                        a.tensor_steps[i] = r.u64()?;
                        a.m[i] = r.reals::<T>(n)?;
                        a.v[i] = r.reals::<T>(n)?;
                    }
                    Some(a)
                }
                b => return Err(NnError::Checkpoint(format!("bad adam flag {b}"))),
            };
            groups.push(CheckpointGroup { name, params, adam });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { counters, groups })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Copies values from `src` into `dst`, matching tensors by name and shape.
pub fn restore_values<T: Real>(dst: &mut ParameterSet<T>, src: &ParameterSet<T>) -> Result<(), NnError> {
    if dst.len() != src.len() {
        return Err(NnError::Checkpoint(format!(
            "tensor count mismatch: {} vs {}",
            dst.len(),
            src.len()
        )));
    }
    for (d, s) in dst.tensors_mut().iter_mut().zip(src.tensors()) {
        if d.name != s.name || d.shape != s.shape {
            return Err(NnError::Checkpoint(format!(
                "tensor {} {:?} does not match {} {:?}",
                d.name, d.shape, s.name, s.shape
            )));
        }
        d.value.copy_from_slice(&s.value);
    }
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NnError::Checkpoint("invalid utf-8 name".into()))
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>, NnError> {
        let w = T::BYTES as usize;
        let raw = self.take(n * w)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }
}
