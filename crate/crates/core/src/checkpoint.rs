// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary tensor checkpoints.
//!
//! Layout:
//!
//! ```text
//! pluralsteer-checkpoint\n
//! format_version=1\n
//! kind=<tinylm|sae>\n
//! <key>=<value>\n ...          (config fields and seed)
//! tensor_count=<n>\n
//! end_header\n
//! then n times:
//! tensor <name> <rows> <cols>\n
//! rows*cols little-endian f64, row-major
//! \n
//! ```
//!
//! Tensors appear in the owning type's fixed order. Values are stored as
//! 64-bit floats so a save/load round trip is bit-exact.

use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "pluralsteer-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl TensorFile {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            header: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push_header(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut line = |s: String| {
            out.extend_from_slice(s.as_bytes());
            out.push(b'\n');
        };
        line(MAGIC.to_string());
        line(format!("format_version={FORMAT_VERSION}"));
        line(format!("kind={}", self.kind));
        for (k, v) in &self.header {
            line(format!("{k}={v}"));
        }
        line(format!("tensor_count={}", self.tensors.len()));
        line("end_header".to_string());
        for (name, t) in &self.tensors {
            out.extend_from_slice(
                format!("tensor {name} {} {}\n", t.nrows(), t.ncols()).as_bytes(),
            );
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.line()? != MAGIC {
            return Err(Error::Checkpoint("missing checkpoint magic line".into()));
        }
        let version = cur.line()?;
        if version != format!("format_version={FORMAT_VERSION}") {
            return Err(Error::Checkpoint(format!("unsupported {version:?}")));
        }
        let kind = cur
            .line()?
            .strip_prefix("kind=")
            .ok_or_else(|| Error::Checkpoint("missing kind".into()))?
            .to_string();
        let mut header = Vec::new();
        let count = loop {
            let l = cur.line()?;
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header line {l:?}")))?;
            if k == "tensor_count" {
                break v
                    .parse::<usize>()
                    .map_err(|_| Error::Checkpoint("bad tensor_count".into()))?;
            }
            header.push((k.to_string(), v.to_string()));
        };
        if cur.line()? != "end_header" {
            return Err(Error::Checkpoint("missing end_header".into()));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let l = cur.line()?;
            let parts: Vec<&str> = l.split(' ').collect();
            let [tag, name, rows, cols] = parts[..] else {
                return Err(Error::Checkpoint(format!("bad tensor line {l:?}")));
            };
            let dims = (rows.parse::<usize>(), cols.parse::<usize>());
            let (Ok(rows), Ok(cols), "tensor") = (dims.0, dims.1, tag) else {
                return Err(Error::Checkpoint(format!("bad tensor line {l:?}")));
            };
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
            let raw = cur.take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if cur.take(1)? != b"\n" {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} not newline-terminated"
                )));
            }
            let t = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((name.to_string(), t));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            kind,
            header,
            tensors,
        })
    }

    pub fn header_value(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("header field {key} missing")))
    }

    pub fn header_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.header_value(key)?;
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("header field {key}={v:?} is malformed")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated tensor data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut f = TensorFile::new("test");
        f.push_header("seed", 7);
        f.tensors.push((
            "a".into(),
            Array2::from_shape_vec((2, 2), vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        ));
        f.tensors.push(("b".into(), Array2::zeros((1, 3))));
        let bytes = f.to_bytes();
        let g = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(g.to_bytes(), bytes);
        assert_eq!(g.header_parse::<u64>("seed").unwrap(), 7);
        let a = &g.tensors[0].1;
        assert_eq!(a[[1, 0]].to_bits(), f64::MIN_POSITIVE.to_bits());
        assert_eq!(a[[0, 1]].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_inputs_are_checkpoint_errors() {
        let mut f = TensorFile::new("test");
        f.tensors.push(("a".into(), Array2::ones((2, 2))));
        let bytes = f.to_bytes();
        for cut in [0, 10, bytes.len() - 5, bytes.len() - 1] {
            assert!(matches!(
                TensorFile::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(TensorFile::from_bytes(&extra).is_err());
        assert!(f.expect_kind("sae").is_err());
    }
}
