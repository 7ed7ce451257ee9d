//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "DMGNNCKP"
//! version      u32       currently 1
//! config_len   u64       length of the embedded config text
//! config       bytes     UTF-8 (TOML), may be empty
//! n_tensors    u32
//!   name_len   u32
//!   name       bytes     UTF-8, e.g. "encoder.mgcu1.s2.gcb.adj"
//!   ndim       u32
//!   dims       u64 x ndim
//!   values     f64 x prod(dims)
//! has_optim    u8        0 = absent, 1 = Adam section follows
//!   step       u64
//!   lr, beta1, beta2, eps   f64 x 4
//!   n_entries  u32
//!     name_len u32, name bytes
//!     len      u64
//!     m        f64 x len
//!     v        f64 x len
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::optim::{AdamConfig, Moments};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DMGNNCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub config: AdamConfig,
    pub entries: Vec<(String, Moments)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<NamedArray>,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn load_err(msg: impl Into<String>) -> Error {
    Error::Load(msg.into())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| load_err(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| load_err("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?).map_err(|_| load_err("name is not valid UTF-8"))
    }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.config.len() as u64).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            put_str(w, &t.name)?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            put_f64s(w, &t.values)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0u8])?,
            Some(opt) => {
                w.write_all(&[1u8])?;
                w.write_all(&opt.step.to_le_bytes())?;
                put_f64s(w, &[opt.config.lr, opt.config.beta1, opt.config.beta2, opt.config.eps])?;
                w.write_all(&(opt.entries.len() as u32).to_le_bytes())?;
                for (name, m) in &opt.entries {
                    put_str(w, name)?;
                    w.write_all(&(m.m.len() as u64).to_le_bytes())?;
                    put_f64s(w, &m.m)?;
                    put_f64s(w, &m.v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Checkpoint> {
        let mut r = Reader { inner: r };
        if r.bytes(8)? != MAGIC {
            return Err(load_err("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(load_err(format!("unsupported checkpoint version {version}")));
        }
        let config_len = r.u64()? as usize;
        let config = r.string(config_len)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let values = r.f64s(shape.iter().product())?;
            tensors.push(NamedArray { name, shape, values });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let h = r.f64s(4)?;
                let count = r.u32()? as usize;
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let name_len = r.u32()? as usize;
                    let name = r.string(name_len)?;
                    let len = r.u64()? as usize;
                    let m = r.f64s(len)?;
                    let v = r.f64s(len)?;
                    entries.push((name, Moments { m, v }));
                }
                Some(OptimizerSnapshot {
                    step,
                    config: AdamConfig {
                        lr: h[0],
                        beta1: h[1],
                        beta2: h[2],
                        eps: h[3],
                    },
                    entries,
                })
            }
            other => return Err(load_err(format!("unknown optimizer tag {other}"))),
        };
        Ok(Checkpoint {
            config,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(BufReader::new(file))
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedArray> {
        self.tensors.iter().find(|t| t.name == name)
    }
}
