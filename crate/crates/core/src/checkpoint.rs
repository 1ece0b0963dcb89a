//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TCPV" | version: u32 = 1 | count: u32
//! count × ( name_len: u16 | name: UTF-8 | ndim: u8 | dims: u64 × ndim | values: f64 × Π dims )
//! crc32: u32   (IEEE, over every preceding byte)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EncoderParams, ModelConfig};
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 4] = b"TCPV";
pub const VERSION: u32 = 1;

/// Serializes every parameter tensor in canonical order.
pub fn to_bytes(params: &EncoderParams<f64>) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count =
        u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(3);
        let (a, b, c) = t.shape();
        for dim in [a, b, c] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
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
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Parses a checkpoint into named tensors after validating the CRC.
pub fn parse(bytes: &[u8]) -> Result<Vec<(String, Tensor3<f64>)>> {
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC mismatch".into()));
    }
    let mut cur = Cursor {
        bytes: body,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(cur.array()?);
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.take(1)?[0];
        if ndim != 3 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: expected 3 dims, found {ndim}"
            )));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = usize::try_from(u64::from_le_bytes(cur.array()?))
                .map_err(|_| Error::Checkpoint(format!("`{name}`: dimension overflow")))?;
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= body.len() / 8)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: implausible size")))?;
        let raw = cur.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor3::from_vec(dims[0], dims[1], dims[2], values)
            .map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Rebuilds parameters for `config` from checkpoint bytes, requiring every
/// tensor name and shape to match.
pub fn from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<EncoderParams<f64>> {
    let stored = parse(bytes)?;
    let mut params = EncoderParams::zeros(config)?;
    let mut slots = params.tensors_mut();
    if slots.len() != stored.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, configuration expects {}",
            stored.len(),
            slots.len()
        )));
    }
    for ((name, slot), (sname, t)) in slots.iter_mut().zip(stored) {
        if *name != sname || slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "`{sname}` {:?} does not match `{name}` {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        **slot = t;
    }
    drop(slots);
    Ok(params)
}

pub fn save(path: &Path, params: &EncoderParams<f64>) -> Result<()> {
    std::fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<EncoderParams<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, config)
}
