//! `EXC1` trace files and CSV export.
//!
//! Layout (little-endian): magic `EXC1`, fs `u32`, length `u64`, unit id as
//! 16 zero-padded UTF-8 bytes, scenario `u8`, then `length` records of
//! `(v, i, x)` as `f32`.

use super::{Scenario, SimTrace};
use crate::binio::{check_magic, Reader, Writer};
use crate::error::{validation, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EXC1";
const ID_BYTES: usize = 16;

pub fn trace_to_bytes(t: &SimTrace) -> Result<Vec<u8>> {
    t.validate()?;
    let id = t.unit_id.as_bytes();
    if id.len() > ID_BYTES {
        return Err(validation(format!("unit id '{}' longer than {ID_BYTES} bytes", t.unit_id)));
    }
    let mut w = Writer::default();
    w.buf.reserve(33 + 12 * t.len());
    w.bytes(MAGIC);
    w.u32(t.fs);
    w.u64(t.len() as u64);
    let mut padded = [0u8; ID_BYTES];
    padded[..id.len()].copy_from_slice(id);
    w.bytes(&padded);
    w.u8(t.scenario.code());
    for k in 0..t.len() {
        w.f32(t.v[k]);
        w.f32(t.i[k]);
        w.f32(t.x[k]);
    }
    Ok(w.buf)
}

pub fn trace_from_bytes(bytes: &[u8]) -> Result<SimTrace> {
    let mut r = Reader::new(bytes, "trace");
    check_magic(&mut r, MAGIC)?;
    let fs = r.u32()?;
    let len = r.u64()? as usize;
    let id = r.take(ID_BYTES)?;
    let end = id.iter().position(|&b| b == 0).unwrap_or(ID_BYTES);
    let unit_id = std::str::from_utf8(&id[..end])
        .map_err(|_| r.corrupt("unit id is not UTF-8"))?
        .to_string();
    let scenario = Scenario::from_code(r.u8()?).ok_or_else(|| r.corrupt("unknown scenario code"))?;
    if r.remaining() != len.saturating_mul(12) {
        return Err(r.corrupt(&format!("expected {len} records, found {} bytes", r.remaining())));
    }
    let mut t = SimTrace {
        fs,
        unit_id,
        scenario,
        v: Vec::with_capacity(len),
        i: Vec::with_capacity(len),
        x: Vec::with_capacity(len),
    };
    for _ in 0..len {
        t.v.push(r.f32()?);
        t.i.push(r.f32()?);
        t.x.push(r.f32()?);
    }
    t.validate().map_err(|e| r.corrupt(&e.to_string()))?;
    Ok(t)
}

pub fn write_trace(path: &Path, t: &SimTrace) -> Result<()> {
    std::fs::write(path, trace_to_bytes(t)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<SimTrace> {
    trace_from_bytes(&std::fs::read(path)?)
}

/// Columns `index,v,i,x`.
pub fn write_trace_csv(path: &Path, t: &SimTrace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "index,v,i,x")?;
    for k in 0..t.len() {
        writeln!(f, "{k},{},{},{}", t.v[k], t.i[k], t.x[k])?;
    }
    f.flush()?;
    Ok(())
}
