//! Windowed supervised samples and their `EXW1` file format.
//!
//! Layout (little-endian): magic `EXW1`, n `u32`, count `u64`, a 16-byte
//! channel-order note, the unit-id table (`u32` count, then `u16`-prefixed
//! UTF-8 strings), then `count` records of `2n` `f32` inputs (current
//! first), `f32` label, `u32` unit index, `u8` scenario code and `u64`
//! window end index. A SHA-256 of everything before it closes the file.
//!
//! Values are held as `f64` in memory and stored as `f32`; datasets built
//! by [`super::window`] hold only `f32`-representable values, so their
//! round trip is exact.

use crate::binio::{check_magic, seal, unseal, Reader, Writer};
use crate::error::{validation, Error, Result};
use crate::sim::Scenario;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

const MAGIC: &[u8; 4] = b"EXW1";
const NOTE: &[u8; 16] = b"ch0=i ch1=v\0\0\0\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    n: usize,
    units: Vec<String>,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    unit_idx: Vec<u32>,
    scenarios: Vec<Scenario>,
    t_index: Vec<u64>,
}

impl WindowedDataset {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            units: Vec::new(),
            inputs: Vec::new(),
            labels: Vec::new(),
            unit_idx: Vec::new(),
            scenarios: Vec::new(),
            t_index: Vec::new(),
        }
    }

    /// Window length in samples (each record holds `2n` values).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[2, n]` input of record `k`: current then voltage.
    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * 2 * self.n..(k + 1) * 2 * self.n]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn label(&self, k: usize) -> f64 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn unit(&self, k: usize) -> &str {
        &self.units[self.unit_idx[k] as usize]
    }

    pub fn scenario(&self, k: usize) -> Scenario {
        self.scenarios[k]
    }

    pub fn t_index(&self, k: usize) -> u64 {
        self.t_index[k]
    }

    /// Distinct unit ids that have at least one record.
    pub fn unit_set(&self) -> BTreeSet<String> {
        self.unit_idx.iter().map(|&u| self.units[u as usize].clone()).collect()
    }

    fn unit_slot(&mut self, unit: &str) -> u32 {
        match self.units.iter().position(|u| u == unit) {
            Some(p) => p as u32,
            None => {
                self.units.push(unit.to_string());
                (self.units.len() - 1) as u32
            }
        }
    }

    pub fn push(&mut self, input: &[f64], label: f64, unit: &str, scenario: Scenario, t_index: u64) -> Result<()> {
        if input.len() != 2 * self.n {
            return Err(validation(format!("record holds {} values, expected {}", input.len(), 2 * self.n)));
        }
        if !label.is_finite() {
            return Err(validation("labels must be finite"));
        }
        let u = self.unit_slot(unit);
        self.inputs.extend_from_slice(input);
        self.labels.push(label);
        self.unit_idx.push(u);
        self.scenarios.push(scenario);
        self.t_index.push(t_index);
        Ok(())
    }

    pub fn extend(&mut self, other: &WindowedDataset) -> Result<()> {
        if other.n != self.n {
            return Err(validation("cannot merge datasets with different window lengths"));
        }
        let map: Vec<u32> = other.units.iter().map(|u| self.unit_slot(u)).collect();
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
        self.unit_idx.extend(other.unit_idx.iter().map(|&u| map[u as usize]));
        self.scenarios.extend_from_slice(&other.scenarios);
        self.t_index.extend_from_slice(&other.t_index);
        Ok(())
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        let mut out = WindowedDataset::new(self.n);
        out.units = self.units.clone();
        for &k in indices {
            out.inputs.extend_from_slice(self.input(k));
            out.labels.push(self.labels[k]);
            out.unit_idx.push(self.unit_idx[k]);
            out.scenarios.push(self.scenarios[k]);
            out.t_index.push(self.t_index[k]);
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> WindowedDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&k| keep(k)).collect();
        self.select(&idx)
    }

    pub(crate) fn map_inputs(&self, f: impl Fn(usize, f64) -> f64) -> WindowedDataset {
        let mut out = self.clone();
        let n = self.n;
        for (j, v) in out.inputs.iter_mut().enumerate() {
            *v = f((j / n) % 2, *v);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.reserve(64 + self.len() * (8 * self.n + 17));
        w.bytes(MAGIC);
        w.u32(self.n as u32);
        w.u64(self.len() as u64);
        w.bytes(NOTE);
        w.u32(self.units.len() as u32);
        for u in &self.units {
            w.str(u);
        }
        for k in 0..self.len() {
            for &v in self.input(k) {
                w.f32(v as f32);
            }
            w.f32(self.labels[k] as f32);
            w.u32(self.unit_idx[k]);
            w.u8(self.scenarios[k].code());
            w.u64(self.t_index[k]);
        }
        seal(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        check_magic(&mut r, MAGIC)?;
        let body = unseal(bytes, "dataset")?;
        let mut r = Reader::new(&body[4..], "dataset");
        let n = r.u32()? as usize;
        let count = r.u64()? as usize;
        if r.take(16)? != NOTE {
            return Err(r.corrupt("unexpected channel-order note"));
        }
        let n_units = r.u32()? as usize;
        let mut ds = WindowedDataset::new(n);
        for _ in 0..n_units {
            let u = r.str()?;
            ds.units.push(u);
        }
        let rec = 8 * n + 17;
        if r.remaining() != count.saturating_mul(rec) {
            return Err(r.corrupt(&format!("expected {count} records of {rec} bytes")));
        }
        ds.inputs.reserve(count * 2 * n);
        for _ in 0..count {
            for _ in 0..2 * n {
                ds.inputs.push(r.f32()? as f64);
            }
            let label = r.f32()? as f64;
            let unit = r.u32()?;
            if unit as usize >= n_units {
                return Err(r.corrupt("unit index out of range"));
            }
            let sc = Scenario::from_code(r.u8()?).ok_or_else(|| r.corrupt("unknown scenario code"))?;
            if !label.is_finite() {
                return Err(r.corrupt("non-finite label"));
            }
            ds.labels.push(label);
            ds.unit_idx.push(unit);
            ds.scenarios.push(sc);
            ds.t_index.push(r.u64()?);
        }
        r.finish()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-channel affine standardization `(x − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for Standardization {
    fn default() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }
}

impl Standardization {
    pub fn apply_window(&self, window: &[f64], out: &mut [f64]) {
        let n = window.len() / 2;
        for (j, (o, &v)) in out.iter_mut().zip(window).enumerate() {
            let c = j / n;
            *o = (v - self.mean[c]) / self.std[c];
        }
    }
}

/// Population mean and standard deviation of each channel over all records.
pub fn compute_standardization(ds: &WindowedDataset) -> Result<Standardization> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot standardize an empty dataset".into()));
    }
    let n = ds.n;
    let mut st = Standardization::default();
    for c in 0..2 {
        let vals = || (0..ds.len()).flat_map(move |k| ds.input(k)[c * n..(c + 1) * n].iter().copied());
        let count = (ds.len() * n) as f64;
        let mean = vals().sum::<f64>() / count;
        let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::DegenerateChannel(c));
        }
        st.mean[c] = mean;
        st.std[c] = std;
    }
    Ok(st)
}

pub fn apply_standardization(ds: &WindowedDataset, st: &Standardization) -> WindowedDataset {
    ds.map_inputs(|c, v| (v - st.mean[c]) / st.std[c])
}

pub fn invert_standardization(ds: &WindowedDataset, st: &Standardization) -> WindowedDataset {
    ds.map_inputs(|c, v| v * st.std[c] + st.mean[c])
}

/// Checks that no unit id appears in more than one of the given splits.
pub fn assert_unit_disjoint(splits: &[&WindowedDataset]) -> Result<()> {
    let mut owner: HashMap<String, usize> = HashMap::new();
    for (s, ds) in splits.iter().enumerate() {
        for u in ds.unit_set() {
            if let Some(prev) = owner.insert(u.clone(), s) {
                if prev != s {
                    return Err(validation(format!("unit {u} appears in splits {prev} and {s}")));
                }
            }
        }
    }
    Ok(())
}
