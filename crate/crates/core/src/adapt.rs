//! Label-free batch-norm re-estimation during inference.
//!
//! Each selected batch-norm channel buffers its pre-normalization
//! responses. Predictions always use the current running statistics; after
//! the inference that completes a window of `T`, the buffer's mean and
//! standard deviation are blended in with a one-tap IIR,
//! `μ ← αμ + (1−α)μᵇ`, `σ ← ασ + (1−α)σᵇ`, and the buffer is cleared.

use crate::error::{shape, Error, Result};
use crate::models::{Mode, Model};
use crate::tensor::Graph;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelection {
    FinalBnOnly,
    AllBn,
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_bn_only" | "final" => Ok(Self::FinalBnOnly),
            "all_bn" | "all" => Ok(Self::AllBn),
            other => Err(Error::Config(format!("unknown layer selection '{other}'"))),
        }
    }
}

/// Blend factors worth comparing on a new population.
pub const ALPHA_SWEEP: [f64; 5] = [1e-4, 1e-3, 0.01, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnAdaptConfig {
    /// Inferences per statistics update (`T`).
    pub window: usize,
    pub alpha: f64,
    pub selection: LayerSelection,
    /// `n − 1` denominator for the buffer standard deviation.
    pub unbiased: bool,
}

impl Default for BnAdaptConfig {
    fn default() -> Self {
        Self {
            window: 256,
            alpha: 0.1,
            selection: LayerSelection::FinalBnOnly,
            unbiased: true,
        }
    }
}

impl BnAdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("adaptation window T must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// One row of the adaptation log.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRecord {
    /// Inference count at the update.
    pub t: u64,
    pub layer: usize,
    pub channel: usize,
    pub mu: f64,
    pub sigma: f64,
}

/// A model copy whose selected batch norms track the inference stream.
#[derive(Debug, Clone)]
pub struct BnAdapter {
    model: Model,
    cfg: BnAdaptConfig,
    layers: Vec<usize>,
    initial: Vec<(Vec<f64>, Vec<f64>)>,
    /// `buffers[s][c]`: responses of channel `c` of selected layer `s`.
    buffers: Vec<Vec<Vec<f64>>>,
    t: u64,
    log: Vec<AdaptRecord>,
    skipped_sigma: usize,
}

impl BnAdapter {
    pub fn new(model: &Model, cfg: BnAdaptConfig) -> Result<Self> {
        cfg.validate()?;
        let bns = model.batch_norms();
        if bns.is_empty() {
            return Err(Error::Structural(format!("{} has no batch-norm layer to adapt", model.kind())));
        }
        let layers: Vec<usize> = match cfg.selection {
            LayerSelection::FinalBnOnly => vec![bns.len() - 1],
            LayerSelection::AllBn => (0..bns.len()).collect(),
        };
        let initial = layers
            .iter()
            .map(|&l| (bns[l].running_mean.clone(), bns[l].running_std.clone()))
            .collect();
        let buffers = layers.iter().map(|&l| vec![Vec::new(); bns[l].channels()]).collect();
        Ok(Self {
            model: model.clone(),
            cfg,
            layers,
            initial,
            buffers,
            t: 0,
            log: Vec::new(),
            skipped_sigma: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &BnAdaptConfig {
        &self.cfg
    }

    /// Inferences processed since construction or the last reset.
    pub fn counter(&self) -> u64 {
        self.t
    }

    /// Inferences buffered since the last window boundary.
    pub fn buffered(&self) -> usize {
        (self.t % self.cfg.window as u64) as usize
    }

    /// Responses currently held per channel of each adapted layer.
    pub fn buffered_responses(&self) -> usize {
        self.buffers.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }

    /// Indices (into [`Model::batch_norms`]) of the adapted layers.
    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    /// Current `(μ, σ)` of every adapted layer.
    pub fn stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let bns = self.model.batch_norms();
        self.layers
            .iter()
            .map(|&l| (bns[l].running_mean.clone(), bns[l].running_std.clone()))
            .collect()
    }

    pub fn log(&self) -> &[AdaptRecord] {
        &self.log
    }

    /// Channel updates whose σ was left alone because the buffer was constant.
    pub fn skipped_sigma_updates(&self) -> usize {
        self.skipped_sigma
    }

    /// Restores the starting statistics and clears buffers, counter and log.
    pub fn reset(&mut self) {
        let layers = self.layers.clone();
        let mut bns = self.model.batch_norms_mut();
        for (s, &l) in layers.iter().enumerate() {
            bns[l].running_mean.clone_from(&self.initial[s].0);
            bns[l].running_std.clone_from(&self.initial[s].1);
        }
        self.buffers.iter_mut().flatten().for_each(Vec::clear);
        self.t = 0;
        self.log.clear();
        self.skipped_sigma = 0;
    }

    /// Processes consecutive `[2, n]` windows in stream order and returns
    /// one prediction per window.
    pub fn run(&mut self, windows: &[f64]) -> Result<Vec<f64>> {
        let two_n = 2 * self.model.input_len();
        if windows.len() % two_n != 0 {
            return Err(shape(format!("{} values do not form [2, {}] windows", windows.len(), two_n / 2)));
        }
        let mut out = Vec::with_capacity(windows.len() / two_n);
        let mut rest = windows;
        while !rest.is_empty() {
            // Statistics are constant until the next boundary, so the
            // windows up to it share one eval-mode batch.
            let until = self.cfg.window - (self.t % self.cfg.window as u64) as usize;
            let take = until.min(rest.len() / two_n).min(256);
            let (chunk, tail) = rest.split_at(take * two_n);
            out.extend(self.forward_chunk(chunk)?);
            rest = tail;
        }
        Ok(out)
    }

    pub fn step(&mut self, window: &[f64]) -> Result<f64> {
        if window.len() != 2 * self.model.input_len() {
            return Err(shape("adaptation step expects exactly one window"));
        }
        Ok(self.forward_chunk(window)?[0])
    }

    fn forward_chunk(&mut self, chunk: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let p = self.model.register(&mut g);
        let x = g.input(self.model.input_tensor(chunk)?);
        let f = self.model.forward(&mut g, &p, x, Mode::Eval)?;
        let preds = g.value(f.output).data().to_vec();
        for (s, &l) in self.layers.iter().enumerate() {
            let v = g.value(f.bn_inputs[l]);
            let (b, c) = (v.shape()[0], v.shape()[1]);
            let len: usize = v.shape()[2..].iter().product();
            for bi in 0..b {
                for ch in 0..c {
                    self.buffers[s][ch].extend_from_slice(&v.data()[(bi * c + ch) * len..(bi * c + ch + 1) * len]);
                }
            }
        }
        self.t += preds.len() as u64;
        if self.t % self.cfg.window as u64 == 0 {
            self.update();
        }
        Ok(preds)
    }

    fn update(&mut self) {
        let alpha = self.cfg.alpha;
        let layers = self.layers.clone();
        let mut bns = self.model.batch_norms_mut();
        for (s, &l) in layers.iter().enumerate() {
            let bn = &mut bns[l];
            for (ch, buf) in self.buffers[s].iter_mut().enumerate() {
                let n = buf.len() as f64;
                let mu_b = buf.iter().sum::<f64>() / n;
                let ss = buf.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>();
                let denom = if self.cfg.unbiased && buf.len() > 1 { n - 1.0 } else { n };
                let sigma_b = (ss / denom).sqrt();
                bn.running_mean[ch] = alpha * bn.running_mean[ch] + (1.0 - alpha) * mu_b;
                if sigma_b > 0.0 {
                    bn.running_std[ch] = alpha * bn.running_std[ch] + (1.0 - alpha) * sigma_b;
                } else {
                    self.skipped_sigma += 1;
                    log::warn!("layer {l} channel {ch}: constant responses at t = {}, sigma kept", self.t);
                }
                self.log.push(AdaptRecord {
                    t: self.t,
                    layer: l,
                    channel: ch,
                    mu: bn.running_mean[ch],
                    sigma: bn.running_std[ch],
                });
                buf.clear();
            }
        }
    }

    /// Log as CSV: `t,neuron_id,mu,sigma` with `neuron_id = bn<layer>.<channel>`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("t,neuron_id,mu,sigma\n");
        for r in &self.log {
            let _ = writeln!(out, "{},bn{}.{},{:e},{:e}", r.t, r.layer, r.channel, r.mu, r.sigma);
        }
        out
    }
}

/// Runs a fresh adapter over `windows` and returns the predictions along
/// with the adapter (whose model carries the adapted statistics).
pub fn adapt_forward(model: &Model, windows: &[f64], cfg: BnAdaptConfig) -> Result<(Vec<f64>, BnAdapter)> {
    let mut a = BnAdapter::new(model, cfg)?;
    let preds = a.run(windows)?;
    Ok((preds, a))
}
