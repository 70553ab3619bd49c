//! Binary checkpoint: named tensors, string metadata and optional AdamW state.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "STCK" | version u8
//! u32 n_meta   | n_meta x (str key, str value)
//! u32 n_tensor | n_tensor x (str name, u32 ndim, ndim x u64 dim, numel x f64)
//! u8 has_opt   | [u64 step, f64 lr, f64 wd, f64 beta1, f64 beta2, f64 eps,
//!                 u32 n, n x (u64 len, len x f64 m, len x f64 v)]
//! ```
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use super::adamw::{AdamW, AdamWConfig};
use super::tensor::Tensor;
use super::{Result, TensorError};

const MAGIC: &[u8; 4] = b"STCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.push(VERSION);
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.ndim() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            t.data().iter().for_each(|&x| w.f64(x));
        }
        match &self.optimizer {
            None => w.0.push(0),
            Some(opt) => {
                w.0.push(1);
                w.u64(opt.step);
                let c = opt.config;
                for x in [c.lr, c.weight_decay, c.beta1, c.beta2, c.eps] {
                    w.f64(x);
                }
                w.u32(opt.m.len() as u32);
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    w.u64(m.len() as u64);
                    m.iter().chain(v).for_each(|&x| w.f64(x));
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            metadata.insert(k, v);
        }
        let n_tensor = r.u32()?;
        let mut tensors = Vec::with_capacity(n_tensor as usize);
        for _ in 0..n_tensor {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r.f64s(numel)?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let vals = r.f64s(5)?;
                let config = AdamWConfig {
                    lr: vals[0],
                    weight_decay: vals[1],
                    beta1: vals[2],
                    beta2: vals[3],
                    eps: vals[4],
                };
                let n = r.u32()?;
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for _ in 0..n {
                    let len = r.u64()? as usize;
                    m.push(r.f64s(len)?);
                    v.push(r.f64s(len)?);
                }
                Some(AdamW { config, step, m, v })
            }
            other => return Err(TensorError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(TensorError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            metadata,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TensorError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| TensorError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }
}
