//! Versioned named-tensor container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "ZSU1"
//! version      u32
//! kind         str                      (str = u32 byte length + UTF-8)
//! n_hyper      u32
//!   key, value str, str                 (sorted by key)
//! n_tensors    u32
//!   name       str
//!   dtype      u8                       (0 = f32, 1 = f64)
//!   rank       u32
//!   dims       u64 × rank
//!   offset     u64                      (from payload start)
//!   length     u64                      (bytes)
//! payload      concatenated tensor data, IEEE-754 little-endian
//! checksum     u64                      CRC-64/XZ of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::{write_atomic, CorpusError, Result};
use crate::grad::Tensor;

pub const BUNDLE_MAGIC: &[u8; 4] = b"ZSU1";
pub const BUNDLE_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub(crate) fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values; for `F32` tensors these are already rounded to single precision.
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

/// A model or data artifact: a kind tag, string hyperparameters and named
/// tensors. Hyperparameters are plain data and are never interpreted as code.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelBundle {
    pub kind: String,
    pub hyper: BTreeMap<String, String>,
    tensors: Vec<NamedTensor>,
}

impl ModelBundle {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn set_hyper(&mut self, key: impl Into<String>, value: impl ToString) {
        self.hyper.insert(key.into(), value.to_string());
    }

    pub fn hyper(&self, key: &str) -> Result<&str> {
        self.hyper.get(key).map(String::as_str).ok_or_else(|| {
            CorpusError::Bundle(format!("{} bundle lacks hyperparameter {key:?}", self.kind))
        })
    }

    /// Parses a hyperparameter with `FromStr`.
    pub fn hyper_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.hyper(key)?;
        raw.parse().map_err(|_| {
            CorpusError::Bundle(format!(
                "hyperparameter {key:?} has unparsable value {raw:?}"
            ))
        })
    }

    /// Adds or replaces a tensor. `F32` data is rounded on insertion so the
    /// in-memory bundle equals what a load returns.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64], dtype: DType) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor {name}: shape {shape:?} does not match {} values",
            data.len()
        );
        let data = match dtype {
            DType::F64 => data.to_vec(),
            DType::F32 => data.iter().map(|&v| v as f32 as f64).collect(),
        };
        let t = NamedTensor {
            name,
            dtype,
            shape: shape.to_vec(),
            data,
        };
        match self.tensors.iter_mut().find(|x| x.name == t.name) {
            Some(slot) => *slot = t,
            None => self.tensors.push(t),
        }
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor, dtype: DType) {
        self.insert(name, t.shape(), t.data(), dtype);
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name).ok_or_else(|| {
            CorpusError::Bundle(format!("{} bundle lacks tensor {name:?}", self.kind))
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CorpusError::Bundle(format!(
                "expected a {kind:?} bundle, found {:?}",
                self.kind
            )))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        for (k, v) in &self.hyper {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.dtype.tag());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let len = (t.data.len() * t.dtype.width()) as u64;
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            offset += len;
        }
        for t in &self.tensors {
            match t.dtype {
                DType::F64 => t
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => t
                    .data
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        let sum = crc64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != BUNDLE_MAGIC {
            return Err(CorpusError::Parse {
                offset: 0,
                message: "not a bundle (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version > BUNDLE_VERSION {
            return Err(CorpusError::Version {
                found: version,
                supported: BUNDLE_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(CorpusError::Parse {
                offset: bytes.len(),
                message: "truncated bundle".into(),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let actual = crc64(body);
        if stored != actual {
            return Err(CorpusError::Checksum {
                expected: stored,
                actual,
            });
        }
        let mut c = Cursor {
            bytes: body,
            pos: 8,
        };
        let kind = c.str()?;
        let n_hyper = c.u32()? as usize;
        let mut hyper = BTreeMap::new();
        for _ in 0..n_hyper {
            let k = c.str()?;
            let v = c.str()?;
            hyper.insert(k, v);
        }
        let n_tensors = c.u32()? as usize;
        let mut table = Vec::new();
        for _ in 0..n_tensors {
            let name = c.str()?;
            let at = c.pos;
            let dtype = match c.take(1)?[0] {
                0 => DType::F32,
                1 => DType::F64,
                other => {
                    return Err(CorpusError::Parse {
                        offset: at,
                        message: format!("unknown dtype tag {other}"),
                    })
                }
            };
            let rank = c.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(c.u64()? as usize);
            }
            let offset = c.u64()? as usize;
            let len = c.u64()? as usize;
            table.push((name, dtype, shape, offset, len, at));
        }
        let payload = &body[c.pos..];
        let mut tensors = Vec::with_capacity(table.len());
        for (name, dtype, shape, offset, len, at) in table {
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            if count.and_then(|n| n.checked_mul(dtype.width())) != Some(len)
                || offset
                    .checked_add(len)
                    .is_none_or(|end| end > payload.len())
            {
                return Err(CorpusError::Parse {
                    offset: at,
                    message: format!("tensor {name:?}: table entry inconsistent with payload"),
                });
            }
            let raw = &payload[offset..offset + len];
            let data = match dtype {
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                data,
            });
        }
        Ok(Self {
            kind,
            hyper,
            tensors,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CorpusError::Parse {
                offset: self.pos,
                message: format!("truncated bundle header: need {n} bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CorpusError::Parse {
            offset: at,
            message: "invalid UTF-8 in string".into(),
        })
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_atomic(path, &bundle.to_bytes())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}
