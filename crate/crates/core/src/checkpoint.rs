//! Binary checkpoint format.
//!
//! ```text
//! "OFOH" | version: u32 | count: u32 | entries...
//! entry = name_len: u32 | name (UTF-8) | rank: u32 | dims: u32 * rank | values: f32 * numel
//! ```
//! All integers and floats are little-endian. Values are stored as `f32`, so
//! a save/load cycle rounds in-memory `f64` parameters to single precision;
//! any file produced by [`encode`] decodes and re-encodes to identical bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"OFOH";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::load("checkpoint", format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::load("checkpoint", "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::load(
            "checkpoint",
            format!("unsupported format version {version}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::load("checkpoint", "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::load("checkpoint", format!("tensor {name} is too large")))?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f32()? as f64);
        }
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| Error::load("checkpoint", format!("tensor {name}: {e}")))?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::load("checkpoint", "trailing bytes after last tensor"));
    }
    Ok(entries)
}

/// Entries of `params` with every name prefixed, e.g. `"dem1."`.
pub fn prefixed(params: &ParamSet, prefix: &str) -> Vec<(String, Tensor)> {
    params
        .iter()
        .map(|(n, t)| {
            let mut t = t.clone();
            t.set_requires_grad(false);
            (format!("{prefix}{n}"), t)
        })
        .collect()
}

/// Entries whose names start with `prefix`, with the prefix removed.
pub fn strip_prefix(entries: &[(String, Tensor)], prefix: &str) -> Vec<(String, Tensor)> {
    entries
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
        .collect()
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    std::fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap();
        let bytes = encode(&[("ab".into(), t)]);
        assert_eq!(&bytes[..4], b"OFOH");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..18], b"ab");
        assert_eq!(&bytes[18..22], &1u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &2u32.to_le_bytes());
        assert_eq!(&bytes[26..30], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[30..34], &(-0.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 34);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&[("w".into(), t)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode(&v2).is_err());
    }

    #[test]
    fn prefix_helpers() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[1]));
        let e = prefixed(&ps, "dem1.");
        assert_eq!(e[0].0, "dem1.w");
        let s = strip_prefix(&e, "dem1.");
        assert_eq!(s[0].0, "w");
        assert!(strip_prefix(&e, "dem2.").is_empty());
    }
}
