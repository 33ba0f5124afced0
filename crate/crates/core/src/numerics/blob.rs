//! TNSR tensor blob codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TNSR"  version:u32 = 1  rank:u32  dims:u32 * rank  payload:f64 * prod(dims)
//! ```

use std::fs;
use std::path::Path;

use super::tensor::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                "TNSR blob",
                field,
                format!("truncated at byte {} (need {n} more)", self.pos),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decode a blob, rejecting trailing bytes and non-finite payload values.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format("TNSR blob", "magic", "expected \"TNSR\""));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            "TNSR blob",
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let rank = cur.u32("rank")? as usize;
    if rank > MAX_RANK {
        return Err(Error::format(
            "TNSR blob",
            "rank",
            format!("rank {rank} exceeds {MAX_RANK}"),
        ));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let d = cur.u32(&format!("dims[{i}]"))? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format("TNSR blob", "dims", "element count overflows"))?;
        dims.push(d);
    }
    let payload_len = count
        .checked_mul(8)
        .ok_or_else(|| Error::format("TNSR blob", "dims", "payload size overflows"))?;
    let payload = cur.take(payload_len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(Error::format(
            "TNSR blob",
            "payload",
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            "TNSR blob",
            "payload",
            format!("non-finite value at index {i}"),
        ));
    }
    Tensor::new(dims, data)
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingBlob(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { what, field, detail } => Error::Format {
            what: format!("{what} {}", path.display()),
            field,
            detail,
        },
        other => other,
    })
}
