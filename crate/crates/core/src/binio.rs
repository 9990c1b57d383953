//! Little-endian encoding helpers shared by the binary file formats.
//!
//! Readers work on an in-memory byte slice and turn every short read into
//! [`Error::Corrupt`], so truncated files never panic.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    /// Length-prefixed (u16) UTF-8 string.
    pub fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("{} truncated at byte {} (wanted {n} more)", self.what, self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.arr()?))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.arr()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.corrupt("invalid UTF-8 string"))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.corrupt(&format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    pub fn corrupt(&self, msg: &str) -> Error {
        Error::Corrupt(format!("{}: {msg}", self.what))
    }
}

/// Checks a 4-byte magic of the form `XXX<digit>`: a different prefix is
/// corruption, a different trailing digit is a version mismatch.
pub(crate) fn check_magic(r: &mut Reader, magic: &[u8; 4]) -> Result<()> {
    let got = r.take(4)?;
    if got[..3] != magic[..3] {
        return Err(r.corrupt("bad magic"));
    }
    if got[3] != magic[3] {
        let digit = |b: u8| (b as char).to_digit(10).unwrap_or(u32::MAX);
        return Err(Error::Version {
            found: digit(got[3]),
            expected: digit(magic[3]),
        });
    }
    Ok(())
}

pub(crate) fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Appends a SHA-256 trailer over everything written so far.
pub(crate) fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let d = sha256(&buf);
    buf.extend_from_slice(&d);
    buf
}

/// Verifies and strips the trailer written by [`seal`].
pub(crate) fn unseal<'a>(buf: &'a [u8], what: &str) -> Result<&'a [u8]> {
    if buf.len() < 32 {
        return Err(Error::Corrupt(format!("{what}: file too short")));
    }
    let (body, tail) = buf.split_at(buf.len() - 32);
    if sha256(body) != tail {
        return Err(Error::Corrupt(format!("{what}: checksum mismatch")));
    }
    Ok(body)
}

/// SplitMix64 mixing of a base seed with a path of indices; used to derive
/// independent per-unit / per-scenario streams.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut s = seed;
    for &p in path {
        s = mix(s ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    s
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
