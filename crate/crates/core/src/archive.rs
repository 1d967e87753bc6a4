//! Binary container for named arrays plus a JSON header.
//!
//! Layout: `PSTARCH1` magic, `u64` LE header length, UTF-8 JSON header,
//! raw little-endian array payloads in header order, then a SHA-256 of
//! every preceding byte. Values are stored at the writer's native precision
//! so a write/read cycle at the same precision is bit-exact.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PSTARCH1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive<T> {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayD<T>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl<T: Scalar> Archive<T> {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, array: ArrayD<T>) {
        self.arrays.push((name.into(), array));
    }

    /// Removes and returns the named array.
    pub fn take(&mut self, name: &str) -> Result<ArrayD<T>> {
        let pos = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| corrupt(format!("missing array `{name}`")))?;
        Ok(self.arrays.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            dtype: T::DTYPE.to_string(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, a)| ArrayEntry {
                    name: name.clone(),
                    shape: a.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, a) in &self.arrays {
            for v in a.iter() {
                match T::DTYPE {
                    "f32" => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                    _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or truncated file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length out of bounds"))?;
        let header: Header =
            serde_json::from_slice(&body[16..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(corrupt(format!("unknown dtype {other}"))),
        };
        let mut cursor = header_end;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let end = cursor
                .checked_add(n * width)
                .filter(|&e| e <= body.len())
                .ok_or_else(|| corrupt(format!("payload for `{}` truncated", entry.name)))?;
            let values: Vec<T> = body[cursor..end]
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    } else {
                        T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    }
                })
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked");
            arrays.push((entry.name, array));
            cursor = end;
        }
        if cursor != body.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
