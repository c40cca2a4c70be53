//! Sectioned binary container.
//!
//! ```text
//! "VDET"  version:u32  n_sections:u32
//! n × [ kind:u32  len:u64  payload[len]  crc32(kind ‖ len ‖ payload):u32 ]
//! ```
//! All integers little-endian.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VDET";
pub const VERSION: u32 = 1;

pub mod kind {
    pub const CONFIG: u32 = 1;
    pub const VOCAB: u32 = 2;
    pub const TENSORS: u32 = 3;
    pub const OPTIM: u32 = 4;
    pub const RNG: u32 = 5;
    pub const LAYOUT: u32 = 6;
    pub const BANK: u32 = 7;
    pub const TOKENS: u32 = 8;
    pub const SAMPLES: u32 = 9;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub kind: u32,
    pub payload: Vec<u8>,
}

fn section_crc(kind: u32, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&kind.to_le_bytes());
    h.update(&(payload.len() as u64).to_le_bytes());
    h.update(payload);
    h.finalize()
}

pub fn write_container(sections: &[Section]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        out.extend_from_slice(&s.kind.to_le_bytes());
        out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&s.payload);
        out.extend_from_slice(&section_crc(s.kind, &s.payload).to_le_bytes());
    }
    out
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<Section>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let n = r.u32("section count")?;
    let mut out = Vec::with_capacity(n.min(64) as usize);
    for _ in 0..n {
        let kind = r.u32("section header")?;
        let len = r.u64("section header")?;
        let len = usize::try_from(len).map_err(|_| Error::Truncated("section payload"))?;
        let payload = r.take(len).map_err(|_| Error::Truncated("section payload"))?.to_vec();
        let crc = r.u32("section checksum")?;
        if crc != section_crc(kind, &payload) {
            return Err(Error::Checksum { section: kind });
        }
        out.push(Section { kind, payload });
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last section", r.remaining())));
    }
    Ok(out)
}

/// The single section of `kind`, if present.
pub fn find(sections: &[Section], kind: u32) -> Option<&[u8]> {
    sections.iter().find(|s| s.kind == kind).map(|s| s.payload.as_slice())
}

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u128(&mut self, x: u128) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn usizes(&mut self, xs: &[usize]) {
        self.u64(xs.len() as u64);
        for &x in xs {
            self.u64(x as u64);
        }
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for &x in xs {
            self.f64(x);
        }
    }
}

pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Truncated("payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let s = self.take(N).map_err(|_| Error::Truncated(what))?;
        Ok(s.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn u128(&mut self, what: &'static str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array(what)?))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    /// A length that must fit in what is left, each item taking at least `unit` bytes.
    pub fn len(&mut self, unit: usize, what: &'static str) -> Result<usize> {
        let n = self.u64(what)?;
        if n.saturating_mul(unit.max(1) as u64) > self.remaining() as u64 {
            return Err(Error::Truncated(what));
        }
        Ok(n as usize)
    }

    pub fn str(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n).map_err(|_| Error::Truncated(what))?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    pub fn usizes(&mut self, what: &'static str) -> Result<Vec<usize>> {
        let n = self.len(8, what)?;
        (0..n).map(|_| self.u64(what).map(|x| x as usize)).collect()
    }

    pub fn f64s(&mut self, what: &'static str) -> Result<Vec<f64>> {
        let n = self.len(8, what)?;
        (0..n).map(|_| self.f64(what)).collect()
    }

    pub fn finish(&self, what: &'static str) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} unexpected bytes at the end of {what}", self.remaining())))
        }
    }
}
