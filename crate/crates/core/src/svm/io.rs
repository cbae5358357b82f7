//! SVM model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "EGSV" | version u16 | reserved u16 | meta_len u32 | meta (UTF-8 JSON)
//! dim u32 | n_pool u32 | pool f64[n_pool·dim]
//! n_members u32 | per member:
//!     positive u32 | negative i32 (−1 = rest) | bias f64 | platt_a f64 | platt_b f64
//!     n_sv u32 | sv u32[n_sv] | alphas f64[n_sv] | labels i8[n_sv]
//! has_norm u8 | mean f64[dim] | std f64[dim]      (norm arrays only if has_norm = 1)
//! ```
//!
//! `meta` holds the [`SvmConfig`], the class list, and an opaque front-end
//! description owned by the caller.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Member, Sigmoid, SvmConfig, SvmEnsemble};
use crate::error::{Error, Result};
use crate::lpc::NormStats;

pub const SVM_MAGIC: &[u8; 4] = b"EGSV";
pub const SVM_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModelFile {
    pub ensemble: SvmEnsemble,
    pub norm: Option<NormStats>,
    pub frontend: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: SvmConfig,
    classes: Vec<String>,
    frontend: serde_json::Value,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in model file",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    /// Checks magic and version, returning the version.
    pub fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<()> {
        if self.take(4).ok() != Some(magic.as_slice()) {
            return Err(Error::Format(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::Version {
                found: v,
                expected: version,
            });
        }
        self.u16()?;
        Ok(())
    }

    pub fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| Error::Format(format!("bad metadata: {e}")))
    }
}

pub(crate) fn put_json<T: Serialize>(out: &mut Vec<u8>, v: &T) {
    let meta = serde_json::to_vec(v).expect("metadata serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
}

pub fn svm_model_bytes(m: &SvmModelFile) -> Vec<u8> {
    let e = &m.ensemble;
    let mut out = Vec::new();
    out.extend_from_slice(SVM_MAGIC);
    out.extend_from_slice(&SVM_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    put_json(
        &mut out,
        &Meta {
            config: e.config,
            classes: e.classes.clone(),
            frontend: m.frontend.clone(),
        },
    );
    out.extend_from_slice(&(e.dim as u32).to_le_bytes());
    out.extend_from_slice(&(e.pool.len() as u32).to_le_bytes());
    for v in e.pool.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(e.members.len() as u32).to_le_bytes());
    for mem in &e.members {
        out.extend_from_slice(&(mem.positive as u32).to_le_bytes());
        out.extend_from_slice(&mem.negative.map_or(-1i32, |n| n as i32).to_le_bytes());
        out.extend_from_slice(&mem.bias.to_le_bytes());
        out.extend_from_slice(&mem.platt.a.to_le_bytes());
        out.extend_from_slice(&mem.platt.b.to_le_bytes());
        out.extend_from_slice(&(mem.sv.len() as u32).to_le_bytes());
        for i in &mem.sv {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for a in &mem.alphas {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend(mem.labels.iter().map(|&l| l as u8));
    }
    match &m.norm {
        Some(ns) => {
            out.push(1);
            for v in ns.mean.iter().chain(&ns.std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

pub fn svm_model_from_bytes(bytes: &[u8]) -> Result<SvmModelFile> {
    let mut r = Reader::new(bytes);
    r.header(SVM_MAGIC, SVM_VERSION)?;
    let meta: Meta = r.json()?;
    let dim = r.u32()? as usize;
    let n_pool = r.u32()? as usize;
    let flat = r.f64s(n_pool * dim)?;
    let pool: Vec<Vec<f64>> = if dim == 0 {
        vec![Vec::new(); n_pool]
    } else {
        flat.chunks_exact(dim).map(<[f64]>::to_vec).collect()
    };
    let n_members = r.u32()? as usize;
    let n_classes = meta.classes.len();
    let mut members = Vec::with_capacity(n_members);
    for _ in 0..n_members {
        let positive = r.u32()? as usize;
        let negative = match r.i32()? {
            -1 => None,
            n if n >= 0 => Some(n as usize),
            n => return Err(Error::Format(format!("bad negative class {n}"))),
        };
        if positive >= n_classes || negative.is_some_and(|n| n >= n_classes) {
            return Err(Error::Format("member class out of range".into()));
        }
        let bias = r.f64()?;
        let platt = Sigmoid {
            a: r.f64()?,
            b: r.f64()?,
        };
        let n_sv = r.u32()? as usize;
        let sv = (0..n_sv).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
        if sv.iter().any(|&i| i as usize >= n_pool) {
            return Err(Error::Format("support vector index out of range".into()));
        }
        let alphas = r.f64s(n_sv)?;
        let labels = r.take(n_sv)?.iter().map(|&b| b as i8).collect();
        members.push(Member {
            positive,
            negative,
            sv,
            alphas,
            labels,
            bias,
            platt,
        });
    }
    let norm = match r.u8()? {
        0 => None,
        1 => Some(NormStats {
            mean: r.f64s(dim)?,
            std: r.f64s(dim)?,
        }),
        x => return Err(Error::Format(format!("bad normalizer flag {x}"))),
    };
    r.finish()?;
    Ok(SvmModelFile {
        ensemble: SvmEnsemble {
            config: meta.config,
            classes: meta.classes,
            dim,
            pool,
            members,
        },
        norm,
        frontend: meta.frontend,
    })
}

pub fn write_svm_model(path: &Path, m: &SvmModelFile) -> Result<()> {
    crate::write_atomic(path, &svm_model_bytes(m))
}

pub fn read_svm_model(path: &Path) -> Result<SvmModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    svm_model_from_bytes(&bytes)
}
