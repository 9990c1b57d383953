//! Post-training INT8 quantization of the ConvNet.
//!
//! Weights are quantized per output channel and symmetrically
//! (`scale = max|w|/127`), activations per tensor and asymmetrically
//! (`scale = (max − min)/255`, `zero_point = round(−min/scale) − 128`),
//! biases to `i32` at `scale_w · scale_in`. Rounding is half-to-even
//! everywhere. Convolutions accumulate in `i32`; requantization multiplies
//! by an `f64` scale ratio, rounds and clamps to `i8`. Given the same
//! quantized model and input, the integer path is bit-reproducible.
//!
//! Activation boundaries, in evaluation order: `input`, `stem`, then per
//! residual block `block<j>.conv1`, `block<j>.conv2`, `block<j>.out`. The
//! average pool reuses the last block's parameters and the linear head is
//! dequantized straight to mm.

use crate::binio::{check_magic, seal, unseal, Reader, Writer};
use crate::error::{shape, validation, Error, Result};
use crate::models::{BatchNorm, Conv1d, ConvNet, Model, Net, BN_EPS};
use crate::preproc::{Standardization, WindowedDataset};
use crate::sim::Scenario;
use crate::tensor::kernels::{conv1d_forward, linear_rows, ConvGeom};
use crate::train::{metrics_from_predictions, Metrics};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Scale floor for all-zero weight channels and degenerate ranges.
pub const SCALE_EPS: f64 = 1e-12;
/// Minimum number of calibration windows.
pub const MIN_CALIBRATION_WINDOWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    PerTensorAsymmetric,
    PerChannelSymmetric,
}

/// Affine 8-bit quantization of one tensor (or one channel):
/// `real = scale · (q − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub scheme: Scheme,
}

impl QuantParams {
    /// Asymmetric parameters covering `[min, max]` (widened to contain 0).
    pub fn asymmetric(min: f64, max: f64) -> Self {
        let (lo, hi) = (min.min(0.0), max.max(0.0));
        let scale = ((hi - lo) / 255.0).max(SCALE_EPS);
        let zero_point = ((-lo / scale).round_ties_even() as i64 - 128).clamp(-128, 127) as i32;
        Self {
            scale,
            zero_point,
            scheme: Scheme::PerTensorAsymmetric,
        }
    }

    /// Symmetric parameters for values within `±max_abs`.
    pub fn symmetric(max_abs: f64) -> Self {
        Self {
            scale: (max_abs / 127.0).max(SCALE_EPS),
            zero_point: 0,
            scheme: Scheme::PerChannelSymmetric,
        }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        let (lo, hi) = match self.scheme {
            Scheme::PerTensorAsymmetric => (-128, 127),
            Scheme::PerChannelSymmetric => (-127, 127),
        };
        ((x / self.scale).round_ties_even() + self.zero_point as f64).clamp(lo as f64, hi as f64) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        self.scale * (q as i32 - self.zero_point) as f64
    }
}

fn round_to_i32(x: f64, what: &str) -> Result<i32> {
    let r = x.round_ties_even();
    if !(r >= i32::MIN as f64 && r <= i32::MAX as f64) {
        return Err(Error::Overflow(format!("{what} value {x} does not fit in i32")));
    }
    Ok(r as i32)
}

/// Folds every batch norm into the convolution before it:
/// `w' = w·γ/s`, `b' = (b − μ)·γ/s + β` with `s = √(σ² + ε)`, matching the
/// eval-mode normalization. Models without batch norms are returned as is.
pub fn fold_bn(model: &Model) -> Result<Model> {
    let mut out = model.clone();
    if let Net::ConvNet(net) = &mut out.net {
        for blk in &mut net.blocks {
            for (conv, bn) in [(&mut blk.conv1, &mut blk.bn1), (&mut blk.conv2, &mut blk.bn2)] {
                if let Some(bn) = bn.take() {
                    fold_pair(conv, &bn)?;
                }
            }
        }
    }
    Ok(out)
}

fn fold_pair(conv: &mut Conv1d, bn: &BatchNorm) -> Result<()> {
    let c = conv.c_out();
    if bn.channels() != c {
        return Err(Error::Structural(format!(
            "batch norm over {} channels follows a conv with {c} outputs",
            bn.channels()
        )));
    }
    let per = conv.c_in() * conv.kernel();
    for ch in 0..c {
        if !(bn.running_std[ch].is_finite() && bn.running_std[ch] >= 0.0) {
            return Err(validation(format!("batch norm channel {ch} has invalid sigma")));
        }
        let g = bn.gamma.data()[ch] / (bn.running_std[ch] * bn.running_std[ch] + BN_EPS).sqrt();
        conv.weight.data_mut()[ch * per..(ch + 1) * per].iter_mut().for_each(|w| *w *= g);
        let b = &mut conv.bias.data_mut()[ch];
        *b = (*b - bn.running_mean[ch]) * g + bn.beta.data()[ch];
    }
    Ok(())
}

fn folded_convnet(model: &Model) -> Result<&ConvNet> {
    match &model.net {
        Net::ConvNet(n) if n.is_folded() => Ok(n),
        Net::ConvNet(_) => Err(Error::Structural("fold batch norms before quantizing".into())),
        _ => Err(Error::Structural(format!("{} quantization is not supported; only the ConvNet", model.kind()))),
    }
}

/// Names of the activation boundaries of a ConvNet with `blocks` blocks.
pub fn boundary_names(blocks: usize) -> Vec<String> {
    let mut v = vec!["input".to_string(), "stem".to_string()];
    for j in 0..blocks {
        v.push(format!("block{j}.conv1"));
        v.push(format!("block{j}.conv2"));
        v.push(format!("block{j}.out"));
    }
    v
}

fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = if *x > 0.0 { *x } else { 0.0 });
}

fn conv_f64(conv: &Conv1d, x: &[f64], l_in: usize) -> Result<(Vec<f64>, usize)> {
    let g = ConvGeom::new(conv.c_in(), conv.c_out(), conv.kernel(), conv.stride, conv.pad, l_in)?;
    let mut out = vec![0.0; g.c_out * g.l_out];
    conv1d_forward(&g, x, conv.weight.data(), Some(conv.bias.data()), &mut out);
    Ok((out, g.l_out))
}

/// Float forward of a folded ConvNet on one standardized window, calling
/// `hook(boundary, values)` at every activation boundary (which may modify
/// the values in place). Mirrors the graph evaluation operation for
/// operation, so with a no-op hook it reproduces [`Model::predict`].
pub fn float_forward(net: &ConvNet, x: &[f64], hook: &mut dyn FnMut(usize, &mut [f64])) -> Result<f64> {
    let mut input = x.to_vec();
    hook(0, &mut input);
    let (mut h, l) = conv_f64(&net.stem, &input, net.cfg.input_len)?;
    relu_inplace(&mut h);
    hook(1, &mut h);
    for (j, blk) in net.blocks.iter().enumerate() {
        let (mut a, _) = conv_f64(&blk.conv1, &h, l)?;
        relu_inplace(&mut a);
        hook(2 + 3 * j, &mut a);
        let (mut b, _) = conv_f64(&blk.conv2, &a, l)?;
        hook(3 + 3 * j, &mut b);
        for (o, s) in b.iter_mut().zip(&h) {
            *o += s;
        }
        relu_inplace(&mut b);
        hook(4 + 3 * j, &mut b);
        h = b;
    }
    let inv = 1.0 / net.cfg.pool as f64;
    let pooled: Vec<f64> = h.chunks(net.cfg.pool).map(|w| w.iter().sum::<f64>() * inv).collect();
    let mut y = [0.0];
    linear_rows(&pooled, net.head.weight.data(), Some(net.head.bias.data()), pooled.len(), 1, &mut y);
    Ok(y[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    MinMax,
    /// Clip to the given central percentile, e.g. `99.99`.
    Percentile(f64),
}

/// Observed `(min, max)` per activation boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationRanges {
    pub ranges: BTreeMap<String, (f64, f64)>,
}

/// `[lo, hi]` of `values` under `mode`. Percentile mode returns the
/// `(100 − p)/2` and `(100 + p)/2` order statistics (nearest rank).
pub fn value_range(values: &[f64], mode: CalibrationMode) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("no values to calibrate on".into()));
    }
    match mode {
        CalibrationMode::MinMax => Ok(values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))),
        CalibrationMode::Percentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Config(format!("percentile {p} must lie in (0, 100]")));
            }
            let mut s = values.to_vec();
            s.sort_by(f64::total_cmp);
            let tail = (100.0 - p) / 200.0;
            let n = s.len();
            let lo_idx = ((tail * n as f64).floor() as usize).min(n - 1);
            let hi_idx = (((1.0 - tail) * n as f64).ceil() as usize).clamp(1, n) - 1;
            Ok((s[lo_idx], s[hi_idx.max(lo_idx)]))
        }
    }
}

/// Runs the folded float model over calibration windows and records the
/// range of every activation boundary.
pub fn calibrate(model: &Model, calib: &WindowedDataset, mode: CalibrationMode) -> Result<ActivationRanges> {
    let net = folded_convnet(model)?;
    if calib.is_empty() {
        return Err(Error::EmptyDataset("calibration set is empty".into()));
    }
    if calib.len() < MIN_CALIBRATION_WINDOWS {
        return Err(validation(format!(
            "calibration needs at least {MIN_CALIBRATION_WINDOWS} windows, got {}",
            calib.len()
        )));
    }
    if calib.n() != net.cfg.input_len {
        return Err(shape("calibration windows do not match the model input"));
    }
    let names = boundary_names(net.blocks.len());
    let mut minmax = vec![(f64::INFINITY, f64::NEG_INFINITY); names.len()];
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    // Percentile mode keeps at most this many windows' activations.
    let keep_every = match mode {
        CalibrationMode::MinMax => 0,
        CalibrationMode::Percentile(_) => calib.len().div_ceil(2048),
    };
    let mut x = vec![0.0; 2 * calib.n()];
    for k in 0..calib.len() {
        model.standardization.apply_window(calib.input(k), &mut x);
        let collect = keep_every > 0 && k % keep_every == 0;
        float_forward(net, &x, &mut |b, v| {
            let (lo, hi) = &mut minmax[b];
            for &a in v.iter() {
                *lo = lo.min(a);
                *hi = hi.max(a);
            }
            if collect {
                samples[b].extend_from_slice(v);
            }
        })?;
    }
    let mut out = ActivationRanges::default();
    for (b, name) in names.into_iter().enumerate() {
        let r = match mode {
            CalibrationMode::MinMax => minmax[b],
            CalibrationMode::Percentile(_) => value_range(&samples[b], mode)?,
        };
        out.ranges.insert(name, r);
    }
    Ok(out)
}

/// Integer convolution with per-channel weight scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QConv {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<i8>,
    pub weight_params: Vec<QuantParams>,
    pub bias: Vec<i32>,
    /// Parameters of the layer input.
    pub input: QuantParams,
    /// Parameters of the layer output.
    pub output: QuantParams,
}

impl QConv {
    pub fn from_float(conv: &Conv1d, input: QuantParams, output: QuantParams) -> Result<Self> {
        let (c_out, c_in, k) = (conv.c_out(), conv.c_in(), conv.kernel());
        let per = c_in * k;
        let mut weight = Vec::with_capacity(c_out * per);
        let mut weight_params = Vec::with_capacity(c_out);
        let mut bias = Vec::with_capacity(c_out);
        for ch in 0..c_out {
            let w = &conv.weight.data()[ch * per..(ch + 1) * per];
            let mut qp = QuantParams::symmetric(w.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            // A dead channel keeps its bias representable in i32.
            if w.iter().all(|&v| v == 0.0) {
                qp.scale = qp.scale.max(conv.bias.data()[ch].abs() / (input.scale * (1u64 << 30) as f64));
            }
            weight.extend(w.iter().map(|&v| qp.quantize(v)));
            bias.push(round_to_i32(conv.bias.data()[ch] / (qp.scale * input.scale), "bias")?);
            weight_params.push(qp);
        }
        let q = Self {
            c_in,
            c_out,
            k,
            stride: conv.stride,
            pad: conv.pad,
            weight,
            weight_params,
            bias,
            input,
            output,
        };
        q.check_accumulator()?;
        Ok(q)
    }

    /// Worst-case accumulator magnitude must fit in `i32`.
    fn check_accumulator(&self) -> Result<()> {
        let per = self.c_in * self.k;
        let max_x = 128 + self.input.zero_point.unsigned_abs() as i64 + 127;
        for ch in 0..self.c_out {
            let sw: i64 = self.weight[ch * per..(ch + 1) * per].iter().map(|&w| (w as i64).abs()).sum();
            let bound = sw * max_x + (self.bias[ch] as i64).abs();
            if bound > i32::MAX as i64 {
                return Err(Error::Overflow(format!("channel {ch} accumulator bound {bound} exceeds i32")));
            }
        }
        Ok(())
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.pad - self.k) / self.stride + 1
    }

    /// `i32` accumulators for input codes `x: [c_in, l_in]`.
    pub fn accumulate(&self, x: &[i8], l_in: usize) -> Result<(Vec<i32>, usize)> {
        let l_out = self.out_len(l_in);
        let zp = self.input.zero_point;
        let xs: Vec<i32> = x.iter().map(|&q| q as i32 - zp).collect();
        let mut acc = vec![0i32; self.c_out * l_out];
        for co in 0..self.c_out {
            let o = &mut acc[co * l_out..(co + 1) * l_out];
            o.fill(self.bias[co]);
            for ci in 0..self.c_in {
                let xr = &xs[ci * l_in..(ci + 1) * l_in];
                for kk in 0..self.k {
                    let w = self.weight[(co * self.c_in + ci) * self.k + kk] as i32;
                    for (t, ov) in o.iter_mut().enumerate() {
                        let idx = (t * self.stride + kk) as isize - self.pad as isize;
                        if idx >= 0 && (idx as usize) < l_in {
                            *ov = ov
                                .checked_add(w * xr[idx as usize])
                                .ok_or_else(|| Error::Overflow("conv accumulator overflowed i32".into()))?;
                        }
                    }
                }
            }
        }
        Ok((acc, l_out))
    }

    /// Requantized output codes, optionally followed by ReLU.
    pub fn forward(&self, x: &[i8], l_in: usize, relu: bool) -> Result<(Vec<i8>, usize)> {
        let (acc, l_out) = self.accumulate(x, l_in)?;
        let zo = self.output.zero_point;
        let floor = if relu { zo.max(-128) } else { -128 };
        let mut out = Vec::with_capacity(acc.len());
        for co in 0..self.c_out {
            let m = self.weight_params[co].scale * self.input.scale / self.output.scale;
            for &a in &acc[co * l_out..(co + 1) * l_out] {
                let q = (a as f64 * m).round_ties_even() as i64 + zo as i64;
                out.push(q.clamp(floor as i64, 127) as i8);
            }
        }
        Ok((out, l_out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QBlock {
    pub conv1: QConv,
    pub conv2: QConv,
    /// Parameters of the post-ReLU block output.
    pub output: QuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLinear {
    pub f_in: usize,
    pub weight: Vec<i8>,
    pub weight_params: QuantParams,
    pub bias: i32,
    pub input: QuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_len: usize,
    pub pool: usize,
    pub standardization: Standardization,
    pub input: QuantParams,
    pub stem: QConv,
    pub blocks: Vec<QBlock>,
    pub head: QLinear,
}

/// Quantizes a BN-folded ConvNet with calibrated activation ranges.
pub fn quantize_model(model: &Model, ranges: &ActivationRanges) -> Result<QuantizedModel> {
    let net = folded_convnet(model)?;
    let act = |name: &str| -> Result<QuantParams> {
        let &(lo, hi) = ranges
            .ranges
            .get(name)
            .ok_or_else(|| Error::CalibrationIncomplete(format!("no range for boundary '{name}'")))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::CalibrationIncomplete(format!("invalid range [{lo}, {hi}] for '{name}'")));
        }
        Ok(QuantParams::asymmetric(lo, hi))
    };
    let input = act("input")?;
    let stem_out = act("stem")?;
    let stem = QConv::from_float(&net.stem, input, stem_out)?;
    let mut prev = stem_out;
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for (j, blk) in net.blocks.iter().enumerate() {
        let a = act(&format!("block{j}.conv1"))?;
        let b = act(&format!("block{j}.conv2"))?;
        let out = act(&format!("block{j}.out"))?;
        blocks.push(QBlock {
            conv1: QConv::from_float(&blk.conv1, prev, a)?,
            conv2: QConv::from_float(&blk.conv2, a, b)?,
            output: out,
        });
        prev = out;
    }
    let w = net.head.weight.data();
    let wp = QuantParams::symmetric(w.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    let head = QLinear {
        f_in: w.len(),
        weight: w.iter().map(|&v| wp.quantize(v)).collect(),
        weight_params: wp,
        bias: round_to_i32(net.head.bias.data()[0] / (wp.scale * prev.scale), "head bias")?,
        input: prev,
    };
    Ok(QuantizedModel {
        input_len: net.cfg.input_len,
        pool: net.cfg.pool,
        standardization: model.standardization,
        input,
        stem,
        blocks,
        head,
    })
}

impl QuantizedModel {
    /// Integer forward on one raw `[2, n]` window. `hook(boundary, codes)`
    /// sees the `i8` codes of every activation boundary.
    pub fn forward_window(&self, window: &[f64], hook: &mut dyn FnMut(usize, &[i8])) -> Result<f64> {
        let n = self.input_len;
        if window.len() != 2 * n {
            return Err(shape(format!("window holds {} values, expected {}", window.len(), 2 * n)));
        }
        let mut x = vec![0.0; 2 * n];
        self.standardization.apply_window(window, &mut x);
        let q: Vec<i8> = x.iter().map(|&v| self.input.quantize(v)).collect();
        hook(0, &q);
        let (mut h, l) = self.stem.forward(&q, n, true)?;
        hook(1, &h);
        for (j, blk) in self.blocks.iter().enumerate() {
            let (a, _) = blk.conv1.forward(&h, l, true)?;
            hook(2 + 3 * j, &a);
            let (b, _) = blk.conv2.forward(&a, l, false)?;
            hook(3 + 3 * j, &b);
            let (ob, oh, oo) = (blk.conv2.output, blk.conv1.input, blk.output);
            let (mb, mh) = (ob.scale / oo.scale, oh.scale / oo.scale);
            let out: Vec<i8> = b
                .iter()
                .zip(&h)
                .map(|(&qb, &qh)| {
                    let s = mb * (qb as i32 - ob.zero_point) as f64 + mh * (qh as i32 - oh.zero_point) as f64;
                    let q = s.round_ties_even() as i64 + oo.zero_point as i64;
                    q.clamp(oo.zero_point.max(-128) as i64, 127) as i8
                })
                .collect();
            hook(4 + 3 * j, &out);
            h = out;
        }
        let zp = self.head.input.zero_point;
        let pooled: Vec<i32> = h
            .chunks(self.pool)
            .map(|w| {
                let s: i32 = w.iter().map(|&q| q as i32 - zp).sum();
                (s as f64 / self.pool as f64).round_ties_even() as i32
            })
            .collect();
        if pooled.len() != self.head.f_in {
            return Err(shape("pooled features do not match the head"));
        }
        let mut acc = self.head.bias as i64;
        for (&w, &p) in self.head.weight.iter().zip(&pooled) {
            acc += w as i64 * p as i64;
        }
        let acc = i32::try_from(acc).map_err(|_| Error::Overflow("head accumulator overflowed i32".into()))?;
        Ok(acc as f64 * self.head.weight_params.scale * self.head.input.scale)
    }

    pub fn predict(&self, windows: &[f64]) -> Result<Vec<f64>> {
        windows.chunks(2 * self.input_len).map(|w| self.forward_window(w, &mut |_, _| {})).collect()
    }

    pub fn predict_dataset(&self, ds: &WindowedDataset) -> Result<Vec<f64>> {
        if ds.n() != self.input_len {
            return Err(shape("dataset windows do not match the quantized model"));
        }
        self.predict(ds.inputs())
    }

    /// Parameters of every activation boundary, in order.
    pub fn boundary_params(&self) -> Vec<QuantParams> {
        let mut v = vec![self.input, self.stem.output];
        for b in &self.blocks {
            v.extend([b.conv1.output, b.conv2.output, b.output]);
        }
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(QMAGIC);
        w.u32(QVERSION);
        w.u32(self.input_len as u32);
        w.u32(self.pool as u32);
        w.u32(self.blocks.len() as u32);
        for v in self.standardization.mean.iter().chain(&self.standardization.std) {
            w.f64(*v);
        }
        write_params(&mut w, &self.input);
        write_conv(&mut w, &self.stem);
        for b in &self.blocks {
            write_conv(&mut w, &b.conv1);
            write_conv(&mut w, &b.conv2);
            write_params(&mut w, &b.output);
        }
        w.u32(self.head.f_in as u32);
        write_params(&mut w, &self.head.weight_params);
        write_params(&mut w, &self.head.input);
        w.i32(self.head.bias);
        w.bytes(&self.head.weight.iter().map(|&q| q as u8).collect::<Vec<u8>>());
        seal(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "quantized checkpoint");
        check_magic(&mut r, QMAGIC)?;
        let body = unseal(bytes, "quantized checkpoint")?;
        let mut r = Reader::new(&body[4..], "quantized checkpoint");
        let version = r.u32()?;
        if version != QVERSION {
            return Err(Error::Version { found: version, expected: QVERSION });
        }
        let input_len = r.u32()? as usize;
        let pool = r.u32()? as usize;
        let nblocks = r.u32()? as usize;
        let mut st = Standardization::default();
        for v in st.mean.iter_mut().chain(st.std.iter_mut()) {
            *v = r.f64()?;
        }
        let input = read_params(&mut r)?;
        let stem = read_conv(&mut r)?;
        let mut blocks = Vec::new();
        for _ in 0..nblocks {
            let conv1 = read_conv(&mut r)?;
            let conv2 = read_conv(&mut r)?;
            let output = read_params(&mut r)?;
            blocks.push(QBlock { conv1, conv2, output });
        }
        let f_in = r.u32()? as usize;
        let weight_params = read_params(&mut r)?;
        let head_input = read_params(&mut r)?;
        let bias = r.i32()?;
        let weight = r.take(f_in)?.iter().map(|&b| b as i8).collect();
        r.finish()?;
        if pool == 0 || input_len == 0 {
            return Err(Error::Corrupt("quantized checkpoint has a zero-sized layout".into()));
        }
        Ok(Self {
            input_len,
            pool,
            standardization: st,
            input,
            stem,
            blocks,
            head: QLinear {
                f_in,
                weight,
                weight_params,
                bias,
                input: head_input,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const QMAGIC: &[u8; 4] = b"EXQ1";
const QVERSION: u32 = 1;

fn write_params(w: &mut Writer, p: &QuantParams) {
    w.u8(match p.scheme {
        Scheme::PerTensorAsymmetric => 0,
        Scheme::PerChannelSymmetric => 1,
    });
    w.f64(p.scale);
    w.i32(p.zero_point);
}

fn read_params(r: &mut Reader) -> Result<QuantParams> {
    let scheme = match r.u8()? {
        0 => Scheme::PerTensorAsymmetric,
        1 => Scheme::PerChannelSymmetric,
        _ => return Err(r.corrupt("unknown quantization scheme")),
    };
    let scale = r.f64()?;
    let zero_point = r.i32()?;
    if !(scale > 0.0 && scale.is_finite()) || !(-128..=127).contains(&zero_point) {
        return Err(r.corrupt("invalid quantization parameters"));
    }
    if scheme == Scheme::PerChannelSymmetric && zero_point != 0 {
        return Err(r.corrupt("symmetric parameters with a non-zero zero point"));
    }
    Ok(QuantParams { scale, zero_point, scheme })
}

fn write_conv(w: &mut Writer, c: &QConv) {
    for v in [c.c_in, c.c_out, c.k, c.stride, c.pad] {
        w.u32(v as u32);
    }
    write_params(w, &c.input);
    write_params(w, &c.output);
    for p in &c.weight_params {
        write_params(w, p);
    }
    for &b in &c.bias {
        w.i32(b);
    }
    w.bytes(&c.weight.iter().map(|&q| q as u8).collect::<Vec<u8>>());
}

fn read_conv(r: &mut Reader) -> Result<QConv> {
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [c_in, c_out, k, stride, pad] = dims;
    if c_in == 0 || c_out == 0 || k == 0 || stride == 0 || c_in * c_out * k > 1 << 24 {
        return Err(r.corrupt("implausible convolution shape"));
    }
    let input = read_params(r)?;
    let output = read_params(r)?;
    let weight_params = (0..c_out).map(|_| read_params(r)).collect::<Result<Vec<_>>>()?;
    let bias = (0..c_out).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    let weight = r.take(c_in * c_out * k)?.iter().map(|&b| b as i8).collect();
    Ok(QConv {
        c_in,
        c_out,
        k,
        stride,
        pad,
        weight,
        weight_params,
        bias,
        input,
        output,
    })
}

/// Simulated quantization in floating point: weights and every activation
/// boundary pass through quantize-dequantize at `bits` bits; `None` means
/// infinite precision, i.e. the plain folded float model.
pub fn fake_quant_predict(model: &Model, ranges: &ActivationRanges, bits: Option<u32>, windows: &[f64]) -> Result<Vec<f64>> {
    let net = folded_convnet(model)?;
    let names = boundary_names(net.blocks.len());
    let mut net = net.clone();
    let mut act: Vec<Option<(f64, f64, f64)>> = vec![None; names.len()];
    if let Some(bits) = bits {
        if !(2..=24).contains(&bits) {
            return Err(Error::Config(format!("fake quantization needs 2..=24 bits, got {bits}")));
        }
        let levels = (1u64 << bits) as f64 - 1.0;
        let half = ((1u64 << (bits - 1)) - 1) as f64;
        let fq_weights = |w: &mut [f64], per: usize| {
            for ch in w.chunks_mut(per) {
                let s = (ch.iter().fold(0.0, |m: f64, v| m.max(v.abs())) / half).max(SCALE_EPS);
                ch.iter_mut().for_each(|v| *v = (*v / s).round_ties_even().clamp(-half, half) * s);
            }
        };
        let convs = std::iter::once(&mut net.stem).chain(net.blocks.iter_mut().flat_map(|b| [&mut b.conv1, &mut b.conv2]));
        for c in convs {
            let per = c.c_in() * c.kernel();
            fq_weights(c.weight.data_mut(), per);
        }
        let f = net.head.weight.len();
        fq_weights(net.head.weight.data_mut(), f);
        for (b, name) in names.iter().enumerate() {
            let &(lo, hi) = ranges
                .ranges
                .get(name)
                .ok_or_else(|| Error::CalibrationIncomplete(format!("no range for boundary '{name}'")))?;
            let (lo, hi) = (lo.min(0.0), hi.max(0.0));
            let s = ((hi - lo) / levels).max(SCALE_EPS);
            let zp = (-lo / s).round_ties_even();
            act[b] = Some((s, zp, levels));
        }
    }
    let n = net.cfg.input_len;
    let mut x = vec![0.0; 2 * n];
    windows
        .chunks(2 * n)
        .map(|w| {
            model.standardization.apply_window(w, &mut x);
            float_forward(&net, &x, &mut |b, v| {
                if let Some((s, zp, levels)) = act[b] {
                    v.iter_mut().for_each(|a| *a = ((*a / s).round_ties_even() + zp).clamp(0.0, levels) * s - zp * s);
                }
            })
        })
        .collect()
}

/// FP32-versus-INT8 comparison on a test set.
#[derive(Debug, Clone)]
pub struct QuantReport {
    pub fp32: Metrics,
    pub int8: Metrics,
    /// `(boundary, SNR dB)` of the dequantized integer activations against
    /// the folded float activations.
    pub layer_snr_db: Vec<(String, f64)>,
}

/// Windows used for the per-layer SNR.
const SNR_WINDOWS: usize = 256;

pub fn quant_report(fp: &Model, q: &QuantizedModel, test: &WindowedDataset) -> Result<QuantReport> {
    let fp32 = metrics_from_predictions(&fp.predict_dataset(test)?, test)?;
    let int8 = metrics_from_predictions(&q.predict_dataset(test)?, test)?;

    let folded = fold_bn(fp)?;
    let net = folded_convnet(&folded)?;
    let names = boundary_names(net.blocks.len());
    let params = q.boundary_params();
    let mut sig = vec![0.0; names.len()];
    let mut err = vec![0.0; names.len()];
    let mut x = vec![0.0; 2 * test.n()];
    for k in (0..test.len()).step_by(test.len().div_ceil(SNR_WINDOWS).max(1)) {
        let w = test.input(k);
        let mut float_acts: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        folded.standardization.apply_window(w, &mut x);
        float_forward(net, &x, &mut |b, v| float_acts[b] = v.to_vec())?;
        q.forward_window(w, &mut |b, codes| {
            for (c, f) in codes.iter().zip(&float_acts[b]) {
                let d = params[b].dequantize(*c);
                sig[b] += f * f;
                err[b] += (f - d) * (f - d);
            }
        })?;
    }
    let layer_snr_db = names
        .into_iter()
        .enumerate()
        .map(|(b, n)| (n, 10.0 * (sig[b] / err[b]).log10()))
        .collect();
    Ok(QuantReport { fp32, int8, layer_snr_db })
}

impl QuantReport {
    /// Rows `scenario,precision,metric,value_mm` for every scenario present
    /// and both precisions.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("scenario,precision,metric,value_mm\n");
        for s in Scenario::ALL {
            for (prec, m) in [("fp32", &self.fp32), ("int8", &self.int8)] {
                if let Some(sm) = m.scenario(s) {
                    let _ = writeln!(out, "{},{prec},mean,{:.9}", s.name(), sm.mean_l1);
                    let _ = writeln!(out, "{},{prec},max,{:.9}", s.name(), sm.max_l1);
                }
            }
        }
        out
    }

    pub fn snr_csv(&self) -> String {
        let mut out = String::from("boundary,snr_db\n");
        for (n, s) in &self.layer_snr_db {
            let _ = writeln!(out, "{n},{s:.4}");
        }
        out
    }
}
