//! `RFCK` tensor container.
//!
//! Layout: magic `RFCK`, format version (u32 LE), then until end of file one
//! record per tensor: name length (u32), UTF-8 name, rank (u32), each dim
//! (u32), payload as f64 LE.

use std::path::Path;

use super::params::{ParamStore, Segment};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, vec![1], vec![value])
    }
}

pub fn encode_checkpoint(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            kind: "checkpoint",
            position: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        cur.pos = 0;
        return Err(cur.fail("bad magic"));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        cur.pos = 4;
        return Err(cur.fail(format!(
            "version mismatch: file has {version}, reader supports {CHECKPOINT_VERSION}"
        )));
    }
    let mut tensors = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| cur.fail("name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| cur.fail("element count overflows"))?;
        let nbytes = count.checked_mul(8).ok_or_else(|| cur.fail("element count overflows"))?;
        let payload = cur.take(nbytes, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: &Path, tensors: &[Tensor]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidInput("checkpoint path is empty".into()));
    }
    std::fs::write(path, encode_checkpoint(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidInput("checkpoint path is empty".into()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl ParamStore {
    /// Values of every segment as tensors named `{prefix}{segment}`.
    pub fn to_tensors(&self, prefix: &str) -> Vec<Tensor> {
        self.segments()
            .iter()
            .map(|s| Tensor::new(format!("{prefix}{}", s.name), s.shape.clone(), self.values()[s.range()].to_vec()))
            .collect()
    }

    /// Overwrites values from tensors named `{prefix}{segment}`; every segment
    /// must be present with a matching shape.
    pub fn load_tensors(&mut self, prefix: &str, tensors: &[Tensor]) -> Result<()> {
        let found: Vec<Segment> = tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(prefix).map(|n| Segment {
                    name: n.to_string(),
                    offset: 0,
                    shape: t.shape.clone(),
                })
            })
            .collect();
        self.check_layout(&found).map_err(|e| match e {
            Error::Segment { name, message } => Error::Segment {
                name: format!("{prefix}{name}"),
                message,
            },
            other => other,
        })?;
        for seg in self.segments().to_vec() {
            let t = tensors
                .iter()
                .find(|t| t.name == format!("{prefix}{}", seg.name))
                .expect("layout checked");
            self.values_mut()[seg.range()].copy_from_slice(&t.data);
        }
        Ok(())
    }
}
