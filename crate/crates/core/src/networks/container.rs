//! Flat binary container of named 4-D f32 records.
//!
//! ```text
//! header   magic "SACK" | version: u32 | record count: u32
//! record   name length: u32 | name: UTF-8 | shape: 4 × u32 | data: numel × f32
//! trailer  CRC-32 of every preceding byte: u32
//! ```
//!
//! All integers and floats are little-endian. Integer metadata is stored as
//! records whose f32 payload carries raw `u32` bit patterns.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"SACK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    records: Vec<Record>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push(Record {
            name: name.into(),
            tensor,
        });
    }

    /// Store integers bit-exactly as a (1, 1, 1, len) record.
    pub fn push_words(&mut self, name: impl Into<String>, words: &[u32]) {
        let data = words.iter().map(|&w| f32::from_bits(w)).collect();
        let t = Tensor::new(Shape::new(1, 1, 1, words.len()), data).expect("row vector");
        self.push(name, t);
    }

    pub fn push_u64(&mut self, name: impl Into<String>, value: u64) {
        self.push_words(name, &[value as u32, (value >> 32) as u32]);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    pub fn words(&self, name: &str) -> Result<Vec<u32>> {
        Ok(self.require(name)?.data().iter().map(|v| v.to_bits()).collect())
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let w = self.words(name)?;
        if w.len() != 2 {
            return Err(Error::Checkpoint(format!("record {name} is not a u64")));
        }
        Ok(w[0] as u64 | ((w[1] as u64) << 32))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            for d in r.tensor.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in r.tensor.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt container: {what}"));
        if bytes.len() < 16 {
            return Err(corrupt("truncated header"));
        }
        if bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let count = cur.u32().ok_or_else(|| corrupt("record count"))?;
        let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let bad = || corrupt(&format!("record {i}"));
            let len = cur.u32().ok_or_else(bad)? as usize;
            let name = std::str::from_utf8(cur.take(len).ok_or_else(bad)?)
                .map_err(|_| corrupt(&format!("record {i} name is not UTF-8")))?
                .to_owned();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = cur.u32().ok_or_else(bad)? as usize;
            }
            let shape = Shape::from_dims(dims);
            let raw = cur.take(shape.numel() * 4).ok_or_else(bad)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            records.push(Record {
                name,
                tensor: Tensor::new(shape, data)?,
            });
        }
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}
