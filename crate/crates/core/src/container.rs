//! Versioned binary container for named f64 arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! digest       32 bytes   (caller-defined, e.g. a config hash)
//! blob count   u32
//! per blob:    name_len u32, name utf-8, rank u32, dims u64 * rank,
//!              data f64 * product(dims)
//! checksum     32 bytes   SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::param::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub version: u32,
    pub digest: [u8; 32],
    pub blobs: Vec<Param>,
}

impl Container {
    pub fn new(magic: [u8; 8], version: u32, digest: [u8; 32]) -> Self {
        Self {
            magic,
            version,
            digest,
            blobs: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.blobs.push(Param::new(name, shape, data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name)
            .ok_or_else(|| Error::Corrupt(format!("missing blob `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for d in &b.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: [u8; 8], version: u32) -> Result<Self> {
        if bytes.len() < 8 + 4 + 32 + 4 + 32 {
            return Err(Error::Corrupt("file too short".into()));
        }
        if bytes[..8] != magic {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if found != version {
            return Err(Error::Version {
                found,
                expected: version,
            });
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u32()?;
        let mut blobs = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Corrupt("blob name is not utf-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("blob too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push(Param::new(name, &shape, data)?);
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            magic,
            version,
            digest,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, magic: [u8; 8], version: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, version)
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
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
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
}
