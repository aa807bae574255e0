//! Binary checkpoint container.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u32` header length,
//! JSON header with the [`NetworkShape`] and optional caller metadata, `u32`
//! tensor count, then per tensor
//! `u32` rows, `u32` cols and `rows * cols` `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldNetwork, NetworkShape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SEGSDFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: NetworkShape,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
}

pub fn encode_checkpoint<T: Scalar>(net: &FieldNetwork<T>) -> Vec<u8> {
    encode_checkpoint_with(net, &serde_json::Value::Null)
}

/// Encodes with an arbitrary JSON `meta` object stored in the header.
pub fn encode_checkpoint_with<T: Scalar>(net: &FieldNetwork<T>, meta: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        shape: net.shape.clone(),
        meta: meta.clone(),
    })
    .expect("shape serializes");
    let params = net.parameters();
    let mut out = Vec::with_capacity(32 + header.len() + 8 * net.parameter_count() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols() as u32).to_le_bytes());
        for v in p.as_slice() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<FieldNetwork<T>> {
    Ok(decode_checkpoint_with(bytes)?.0)
}

/// Decodes the network and its header metadata (`Null` when absent).
pub fn decode_checkpoint_with<T: Scalar>(bytes: &[u8]) -> Result<(FieldNetwork<T>, serde_json::Value)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = cur.u32()? as usize;
    let header: Header =
        serde_json::from_slice(cur.take(len)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let expected = header.shape.parameter_shapes();
    let mut net = FieldNetwork::<T>::zeros(header.shape).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = cur.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, architecture needs {}",
            expected.len()
        )));
    }
    for (i, (p, &(rows, cols))) in net.parameters_mut().into_iter().zip(&expected).enumerate() {
        let (r, c) = (cur.u32()? as usize, cur.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is {r}x{c}, architecture needs {rows}x{cols}"
            )));
        }
        let raw = cur.take(8 * r * c)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect();
        *p = Matrix::from_vec(r, c, data);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok((net, header.meta))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &FieldNetwork<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<FieldNetwork<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
