//! `EXM1` model checkpoints.
//!
//! Layout (little-endian): magic `EXM1`, version `u32`, config blob (`u32`
//! length + `key = value` text), tensor count `u32`, a directory of
//! `(name, dtype u8, rank u8, dims u32…, offset u64)` entries, payload length
//! `u64`, the payload, and a SHA-256 of everything before it. dtype 2 is
//! `f64`, which keeps a save/load round trip bit-exact.

use super::{ConvNet, ConvNetConfig, DspModel, FftNet, FftNetConfig, Model, Net};
use crate::binio::{check_magic, seal, unseal, Reader, Writer};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EXM1";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 2;

fn config_blob(m: &Model) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.set("kind", m.kind());
    match &m.net {
        Net::FftNet(n) => {
            let c = &n.cfg;
            kv.set("channels", c.channels);
            kv.set("blocks", c.blocks);
            kv.set("modes", c.modes);
            kv.set("heads", c.heads);
            kv.set("kernel", c.kernel);
            kv.set("pool", c.pool);
            kv.set("input_len", c.input_len);
            kv.set("per_mode", c.per_mode);
        }
        Net::ConvNet(n) => {
            let c = &n.cfg;
            kv.set("channels", c.channels);
            kv.set("blocks", c.blocks);
            kv.set("kernel", c.kernel);
            kv.set("pool", c.pool);
            kv.set("input_len", c.input_len);
            kv.set("stem_stride", c.stem_stride);
            kv.set("folded", n.is_folded());
        }
        Net::Dsp(n) => {
            kv.set("input_len", n.input_len);
            kv.set("decimation", n.decimation);
        }
    }
    kv
}

fn skeleton(kv: &KeyValues) -> Result<Model> {
    let kind: String = kv.require("kind")?;
    let net = match kind.as_str() {
        "fftnet" => Net::FftNet(FftNet::build(
            FftNetConfig {
                channels: kv.require("channels")?,
                blocks: kv.require("blocks")?,
                modes: kv.require("modes")?,
                heads: kv.require("heads")?,
                kernel: kv.require("kernel")?,
                pool: kv.require("pool")?,
                input_len: kv.require("input_len")?,
                per_mode: kv.require("per_mode")?,
            },
            0,
        )?),
        "convnet" => {
            let mut n = ConvNet::build(
                ConvNetConfig {
                    channels: kv.require("channels")?,
                    blocks: kv.require("blocks")?,
                    kernel: kv.require("kernel")?,
                    pool: kv.require("pool")?,
                    input_len: kv.require("input_len")?,
                    stem_stride: kv.require("stem_stride")?,
                },
                0,
            )?;
            if kv.require::<bool>("folded")? {
                for b in &mut n.blocks {
                    b.bn1 = None;
                    b.bn2 = None;
                }
            }
            Net::ConvNet(n)
        }
        "dsp" => Net::Dsp(DspModel::zeros(kv.require("input_len")?, kv.require("decimation")?)?),
        other => return Err(Error::Corrupt(format!("checkpoint holds unknown model kind '{other}'"))),
    };
    Ok(Model::new(net))
}

fn stats_tensors(m: &Model) -> Vec<(String, Tensor)> {
    let st = &m.standardization;
    let mut out = vec![
        ("input.mean".to_string(), Tensor::new(vec![2], st.mean.to_vec()).expect("2 values")),
        ("input.std".to_string(), Tensor::new(vec![2], st.std.to_vec()).expect("2 values")),
    ];
    if let Net::ConvNet(n) = &m.net {
        out.extend(n.buffers());
    }
    out
}

pub fn model_to_bytes(m: &Model) -> Vec<u8> {
    let mut entries: Vec<(String, Tensor)> = m.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    entries.extend(stats_tensors(m));

    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let blob = config_blob(m).render();
    w.u32(blob.len() as u32);
    w.bytes(blob.as_bytes());
    w.u32(entries.len() as u32);
    let mut offset = 0u64;
    for (name, t) in &entries {
        w.str(name);
        w.u8(DTYPE_F64);
        w.u8(t.shape().len() as u8);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.u64(offset);
        offset += 8 * t.len() as u64;
    }
    w.u64(offset);
    for (_, t) in &entries {
        for &v in t.data() {
            w.f64(v);
        }
    }
    seal(w.buf)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, "checkpoint");
    check_magic(&mut r, MAGIC)?;
    let body = unseal(bytes, "checkpoint")?;
    let mut r = Reader::new(&body[4..], "checkpoint");
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let blob_len = r.u32()? as usize;
    let blob = std::str::from_utf8(r.take(blob_len)?).map_err(|_| r.corrupt("config blob is not UTF-8"))?;
    let kv = KeyValues::parse(blob).map_err(|e| Error::Corrupt(format!("config blob: {e}")))?;

    let count = r.u32()? as usize;
    let mut dir = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.str()?;
        if r.u8()? != DTYPE_F64 {
            return Err(r.corrupt(&format!("tensor {name} has an unsupported dtype")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        dir.push((name, dims, offset));
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    r.finish()?;

    let mut tensors = BTreeMap::new();
    for (name, dims, offset) in dir {
        let len: usize = dims.iter().product();
        let end = offset.checked_add(8 * len).filter(|&e| e <= payload.len());
        let Some(end) = end else {
            return Err(Error::Corrupt(format!("tensor {name} runs past the payload")));
        };
        let data = payload[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(dims, data)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Corrupt(format!("tensor {name} appears twice")));
        }
    }

    let mut model = skeleton(&kv)?;
    let mut take = |name: &str, want: &[usize]| -> Result<Tensor> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != want {
            return Err(Error::Corrupt(format!("tensor {name} has shape {:?}, expected {want:?}", t.shape())));
        }
        Ok(t)
    };

    let names: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    for ((name, dims), slot) in names.iter().zip(model.params_mut()) {
        *slot = take(name, dims)?;
    }
    let mean = take("input.mean", &[2])?;
    let std = take("input.std", &[2])?;
    model.standardization.mean.copy_from_slice(mean.data());
    model.standardization.std.copy_from_slice(std.data());
    if let Net::ConvNet(n) = &mut model.net {
        let names: Vec<(String, Vec<usize>)> =
            n.buffers().into_iter().map(|(name, t)| (name, t.shape().to_vec())).collect();
        for (pair, bn) in names.chunks(2).zip(n.batch_norms_mut()) {
            bn.running_mean = take(&pair[0].0, &pair[0].1)?.into_data();
            bn.running_std = take(&pair[1].0, &pair[1].1)?.into_data();
        }
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Corrupt(format!("checkpoint holds unexpected tensor {extra}")));
    }
    Ok(model)
}

pub fn save_checkpoint(m: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(m))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    model_from_bytes(&std::fs::read(path)?)
}
