//! FFTNet, the residual ConvNet and the linear DSP baseline, behind one
//! [`Model`] type with shared inference, accounting and checkpointing.

pub mod checkpoint;
mod convnet;
mod dsp;
mod fftnet;
mod layers;

pub use checkpoint::{load_checkpoint, model_from_bytes, model_to_bytes, save_checkpoint};
pub use convnet::{ConvNet, ConvNetConfig, ResBlock};
pub use dsp::{DspModel, DSP_RIDGE};
pub use fftnet::{faol, Faol, FftNet, FftNetConfig};
pub use layers::{BatchNorm, Conv1d, Linear};

use crate::error::{shape, validation, Result};
use crate::preproc::{Standardization, WindowedDataset};
use crate::tensor::{BatchStats, Graph, Tensor, Var};
use std::fmt;
use std::str::FromStr;

/// Variance floor of every batch norm: `√(σ² + ε)`.
pub const BN_EPS: f64 = 1e-5;

/// Decimation factor of the DSP baseline.
pub const DSP_DECIMATION: usize = 8;

const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norms normalize with batch statistics.
    Train,
    /// Batch norms use their running statistics.
    Eval,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, 1]` predictions in mm.
    pub output: Var,
    /// Pre-normalization input of every batch norm, in layer order.
    pub bn_inputs: Vec<Var>,
    /// Batch statistics of every batch norm (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    FftNet,
    ConvNet,
    Dsp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FftNet => "fftnet",
            ModelKind::ConvNet => "convnet",
            ModelKind::Dsp => "dsp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fftnet" => Ok(ModelKind::FftNet),
            "convnet" => Ok(ModelKind::ConvNet),
            "dsp" => Ok(ModelKind::Dsp),
            other => Err(validation(format!("unknown model '{other}' (expected fftnet, convnet or dsp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    FftNet(FftNet),
    ConvNet(ConvNet),
    Dsp(DspModel),
}

/// A predictor together with the input standardization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Net,
    pub standardization: Standardization,
}

pub fn build_fftnet(cfg: FftNetConfig, seed: u64) -> Result<Model> {
    Ok(Model::new(Net::FftNet(FftNet::build(cfg, seed)?)))
}

pub fn build_convnet(cfg: ConvNetConfig, seed: u64) -> Result<Model> {
    Ok(Model::new(Net::ConvNet(ConvNet::build(cfg, seed)?)))
}

/// Fits the DSP baseline on raw (unstandardized) windows.
pub fn dsp_fit(ds: &WindowedDataset) -> Result<Model> {
    Ok(Model::new(Net::Dsp(DspModel::fit(ds, DSP_DECIMATION)?)))
}

impl Model {
    pub fn new(net: Net) -> Self {
        Self {
            net,
            standardization: Standardization::default(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match &self.net {
            Net::FftNet(_) => ModelKind::FftNet,
            Net::ConvNet(_) => ModelKind::ConvNet,
            Net::Dsp(_) => ModelKind::Dsp,
        }
    }

    /// Window length `n` the model consumes (`[2, n]` per window).
    pub fn input_len(&self) -> usize {
        match &self.net {
            Net::FftNet(m) => m.cfg.input_len,
            Net::ConvNet(m) => m.cfg.input_len,
            Net::Dsp(m) => m.input_len,
        }
    }

    /// Trainable tensors with stable names, in forward order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match &self.net {
            Net::FftNet(m) => m.params(),
            Net::ConvNet(m) => m.params(),
            Net::Dsp(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.net {
            Net::FftNet(m) => m.params_mut(),
            Net::ConvNet(m) => m.params_mut(),
            Net::Dsp(m) => m.params_mut(),
        }
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        match &self.net {
            Net::ConvNet(m) => m.batch_norms(),
            _ => Vec::new(),
        }
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match &mut self.net {
            Net::ConvNet(m) => m.batch_norms_mut(),
            _ => Vec::new(),
        }
    }

    /// Registers every parameter as a graph leaf, in [`Model::params`] order.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Standardizes `B` windows of `[2, n]` into a `[B, 2, n]` tensor.
    pub fn input_tensor(&self, windows: &[f64]) -> Result<Tensor> {
        let n = self.input_len();
        if windows.is_empty() || windows.len() % (2 * n) != 0 {
            return Err(shape(format!("{} values do not form [2, {n}] windows", windows.len())));
        }
        let mut data = vec![0.0; windows.len()];
        for (w, o) in windows.chunks(2 * n).zip(data.chunks_mut(2 * n)) {
            self.standardization.apply_window(w, o);
        }
        Tensor::new(vec![windows.len() / (2 * n), 2, n], data)
    }

    /// Forward pass on graph leaves `p` (from [`Model::register`]) and an
    /// already standardized input `x: [B, 2, n]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, mode: Mode) -> Result<Forward> {
        match &self.net {
            Net::FftNet(m) => m.forward(g, p, x, mode),
            Net::ConvNet(m) => m.forward(g, p, x, mode),
            Net::Dsp(m) => m.forward(g, p, x),
        }
    }

    /// Eval-mode predictions (mm) for consecutive `[2, n]` windows.
    pub fn predict(&self, windows: &[f64]) -> Result<Vec<f64>> {
        let n = self.input_len();
        let mut out = Vec::with_capacity(windows.len() / (2 * n).max(1));
        for chunk in windows.chunks(PREDICT_CHUNK * 2 * n) {
            let mut g = Graph::inference();
            let p = self.register(&mut g);
            let x = g.input(self.input_tensor(chunk)?);
            let f = self.forward(&mut g, &p, x, Mode::Eval)?;
            out.extend_from_slice(g.value(f.output).data());
        }
        Ok(out)
    }

    pub fn predict_window(&self, window: &[f64]) -> Result<f64> {
        Ok(self.predict(window)?[0])
    }

    pub fn predict_dataset(&self, ds: &WindowedDataset) -> Result<Vec<f64>> {
        if ds.n() != self.input_len() {
            return Err(shape(format!("dataset windows of {} do not match model input {}", ds.n(), self.input_len())));
        }
        if ds.is_empty() {
            return Ok(Vec::new());
        }
        self.predict(ds.inputs())
    }

    /// Number of scalar trainable parameters (running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Floating-point operations of one forward pass on a window of
    /// `input_len` samples: twice the multiply-accumulates of every conv,
    /// linear, attention and mode-mix layer. FFTs, pooling, activations and
    /// normalization are not counted.
    pub fn count_flops(&self, input_len: usize) -> Result<u64> {
        if input_len != self.input_len() {
            return Err(shape(format!("model is built for windows of {} samples", self.input_len())));
        }
        let macs = match &self.net {
            Net::FftNet(m) => m.macs(input_len),
            Net::ConvNet(m) => m.macs(input_len),
            Net::Dsp(m) => m.readout.macs(),
        };
        Ok(2 * macs as u64)
    }
}
