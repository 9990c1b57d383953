//! Training loop, optimizer and millimetre-denominated metrics.

use crate::error::{shape, validation, Error, Result};
use crate::kv::KeyValues;
use crate::models::{dsp_fit, Mode, Model, ModelKind};
use crate::preproc::{assert_unit_disjoint, compute_standardization, WindowedDataset};
use crate::sim::Scenario;
use crate::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Residual (mm) below which a window counts as protected.
pub const PROTECT_MM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// When set, the step size follows a cosine from `lr` down to this
    /// value over the scheduled number of steps.
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Quartic loss scale, mm⁻³.
    pub delta: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Epochs without a new best validation mean-L1 before stopping.
    pub patience: usize,
    pub bn_momentum: f64,
    /// Caps the mini-batches drawn per epoch (a fresh random subset each
    /// epoch); `None` uses every window.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr: 1e-3,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            delta: 1000.0,
            clip_norm: Some(5.0),
            patience: 15,
            bn_momentum: 0.1,
            batches_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.lr_final.is_some_and(|f| !(f >= 0.0 && f <= self.lr)) {
            return bad("lr_final must lie in [0, lr]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1]");
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be >= 1");
        }
        Ok(())
    }

    /// Overrides fields from `key = value` pairs; unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for key in kv.keys() {
            match key {
                "batch_size" => self.batch_size = kv.require(key)?,
                "epochs" => self.epochs = kv.require(key)?,
                "lr" => self.lr = kv.require(key)?,
                "lr_final" => {
                    let v: f64 = kv.require(key)?;
                    self.lr_final = (v >= 0.0).then_some(v);
                }
                "beta1" => self.beta1 = kv.require(key)?,
                "beta2" => self.beta2 = kv.require(key)?,
                "adam_eps" => self.adam_eps = kv.require(key)?,
                "delta" => self.delta = kv.require(key)?,
                "clip_norm" => {
                    let v: f64 = kv.require(key)?;
                    self.clip_norm = (v > 0.0).then_some(v);
                }
                "patience" => self.patience = kv.require(key)?,
                "bn_momentum" => self.bn_momentum = kv.require(key)?,
                "batches_per_epoch" => {
                    let v: usize = kv.require(key)?;
                    self.batches_per_epoch = (v > 0).then_some(v);
                }
                "seed" => self.seed = kv.require(key)?,
                _ => {}
            }
        }
        self.validate()
    }

    pub fn echo(&self, kv: &mut KeyValues) {
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("lr", self.lr);
        kv.set("lr_final", self.lr_final.unwrap_or(-1.0));
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("adam_eps", self.adam_eps);
        kv.set("delta", self.delta);
        kv.set("clip_norm", self.clip_norm.unwrap_or(0.0));
        kv.set("patience", self.patience);
        kv.set("bn_momentum", self.bn_momentum);
        kv.set("batches_per_epoch", self.batches_per_epoch.unwrap_or(0));
        kv.set("seed", self.seed);
    }
}

/// `mean_i δ·(target_i − pred_i)⁴`.
pub fn scaled_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| delta * (t - p).powi(4)).sum::<f64>() / pred.len() as f64)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[k][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Absolute-residual summary over a set of windows, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub mean_l1: f64,
    pub max_l1: f64,
    pub pct_under_0p1mm: f64,
    /// One entry per scenario present, in [`Scenario::ALL`] order.
    pub per_scenario: Vec<(Scenario, Metrics)>,
    /// The 1% of windows whose label moves fastest (see [`transient_windows`]).
    pub transient: Option<Box<Metrics>>,
}

impl Metrics {
    fn summarize(residuals: &[f64]) -> Metrics {
        let n = residuals.len();
        let sum: f64 = residuals.iter().sum();
        Metrics {
            count: n,
            mean_l1: if n == 0 { 0.0 } else { sum / n as f64 },
            max_l1: residuals.iter().copied().fold(0.0, f64::max),
            pct_under_0p1mm: if n == 0 {
                100.0
            } else {
                100.0 * residuals.iter().filter(|&&r| r < PROTECT_MM).count() as f64 / n as f64
            },
            per_scenario: Vec::new(),
            transient: None,
        }
    }

    pub fn scenario(&self, s: Scenario) -> Option<&Metrics> {
        self.per_scenario.iter().find(|(k, _)| *k == s).map(|(_, m)| m)
    }
}

/// Indices of the windows whose DC label changes fastest: the top 1% by
/// `|Δlabel / Δt|` between consecutive windows of the same unit and
/// scenario.
pub fn transient_windows(ds: &WindowedDataset) -> Vec<usize> {
    let mut groups: HashMap<(&str, Scenario), Vec<usize>> = HashMap::new();
    for k in 0..ds.len() {
        groups.entry((ds.unit(k), ds.scenario(k))).or_default().push(k);
    }
    let mut slopes: Vec<(f64, usize)> = Vec::new();
    for idx in groups.values_mut() {
        idx.sort_by_key(|&k| ds.t_index(k));
        for w in idx.windows(2) {
            let dt = ds.t_index(w[1]).saturating_sub(ds.t_index(w[0])).max(1) as f64;
            slopes.push(((ds.label(w[1]) - ds.label(w[0])).abs() / dt, w[1]));
        }
    }
    let take = slopes.len() / 100;
    slopes.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = slopes[..take].iter().map(|&(_, k)| k).collect();
    out.sort_unstable();
    out
}

/// Metrics of `predictions` against the labels of `ds`.
pub fn metrics_from_predictions(predictions: &[f64], ds: &WindowedDataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty dataset".into()));
    }
    if predictions.len() != ds.len() {
        return Err(shape(format!("{} predictions for {} windows", predictions.len(), ds.len())));
    }
    let residuals: Vec<f64> = predictions.iter().zip(ds.labels()).map(|(p, y)| (p - y).abs()).collect();
    let mut m = Metrics::summarize(&residuals);
    for s in Scenario::ALL {
        let r: Vec<f64> = (0..ds.len()).filter(|&k| ds.scenario(k) == s).map(|k| residuals[k]).collect();
        if !r.is_empty() {
            m.per_scenario.push((s, Metrics::summarize(&r)));
        }
    }
    let tr = transient_windows(ds);
    if !tr.is_empty() {
        let r: Vec<f64> = tr.iter().map(|&k| residuals[k]).collect();
        m.transient = Some(Box::new(Metrics::summarize(&r)));
    }
    Ok(m)
}

/// Eval-mode metrics of `model` on `ds`.
pub fn evaluate(model: &Model, ds: &WindowedDataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty dataset".into()));
    }
    metrics_from_predictions(&model.predict_dataset(ds)?, ds)
}

/// Metrics as CSV: one row per slice (`all`, each scenario, `transient`).
pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("slice,count,mean_l1_mm,max_l1_mm,pct_under_0p1mm\n");
    let mut row = |name: &str, m: &Metrics| {
        let _ = writeln!(out, "{name},{},{:.9},{:.9},{:.4}", m.count, m.mean_l1, m.max_l1, m.pct_under_0p1mm);
    };
    row("all", m);
    for (s, sm) in &m.per_scenario {
        row(s.name(), sm);
    }
    if let Some(t) = &m.transient {
        row("transient", t);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mean_mm: f64,
    pub val_max_mm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mean_mm,val_max_mm\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.12e},{:.9},{:.9}", r.epoch, r.train_loss, r.val_mean_mm, r.val_max_mm);
        }
        out
    }
}

/// Step size for optimizer step `step` of `total`.
pub fn scheduled_lr(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    match cfg.lr_final {
        None => cfg.lr,
        Some(lo) => {
            let frac = step as f64 / total.max(1) as f64;
            lo + 0.5 * (cfg.lr - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    inputs: &[f64],
    targets: &[f64],
    cfg: &TrainConfig,
    lr: f64,
    (epoch, batch): (usize, usize),
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.register(&mut g);
    let x = g.input(model.input_tensor(inputs)?);
    let fwd = model.forward(&mut g, &vars, x, Mode::Train)?;
    let loss = g.scaled_quartic(fwd.output, targets, cfg.delta)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, batch, lr });
    }
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let grads_all = g.backward(loss)?;
    let mut grads: Vec<Vec<f64>> = vars.iter().zip(&sizes).map(|(v, &n)| grads_all.get_or_zeros(*v, n)).collect();
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch, batch, lr });
    }
    if let Some(c) = cfg.clip_norm {
        clip_global_norm(&mut grads, c);
    }
    adam.step(&mut model.params_mut(), &grads, lr);
    for (bn, st) in model.batch_norms_mut().into_iter().zip(&fwd.batch_stats) {
        bn.track(&st.mean, &st.std_unbiased, cfg.bn_momentum);
    }
    Ok(value)
}

/// Trains `model` on `train`, keeping the parameters with the lowest
/// validation mean-L1. Input standardization is fitted on `train` first.
/// The DSP baseline is solved in closed form instead.
pub fn train(model: &Model, train: &WindowedDataset, val: &WindowedDataset, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    assert_unit_disjoint(&[train, val])?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("training needs non-empty train and validation sets".into()));
    }
    if train.n() != model.input_len() || val.n() != model.input_len() {
        return Err(validation("dataset window length does not match the model"));
    }
    if model.kind() == ModelKind::Dsp {
        let fitted = dsp_fit(train)?;
        let m = evaluate(&fitted, val)?;
        let history = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: scaled_loss(&fitted.predict_dataset(train)?, train.labels(), cfg.delta)?,
                val_mean_mm: m.mean_l1,
                val_max_mm: m.max_l1,
            }],
            best_epoch: 1,
        };
        return Ok((fitted, history));
    }

    let mut model = model.clone();
    model.standardization = compute_standardization(train)?;
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(&sizes, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let two_n = 2 * train.n();
    let mut inputs = Vec::with_capacity(cfg.batch_size * two_n);
    let mut targets = Vec::with_capacity(cfg.batch_size);

    let per_epoch = train.len().div_ceil(cfg.batch_size).min(cfg.batches_per_epoch.unwrap_or(usize::MAX));
    let total_steps = per_epoch * cfg.epochs;
    let mut step = 0;

    let mut history = History::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.batches_per_epoch.is_some_and(|cap| b >= cap) {
                break;
            }
            inputs.clear();
            targets.clear();
            for &k in chunk {
                inputs.extend_from_slice(train.input(k));
                targets.push(train.label(k));
            }
            let lr = scheduled_lr(cfg, step, total_steps);
            loss_sum += train_step(&mut model, &mut adam, &inputs, &targets, cfg, lr, (epoch, b))?;
            step += 1;
            batches += 1;
        }
        let m = evaluate(&model, val)?;
        log::info!(
            "epoch {epoch}: loss {:.4e}, val mean {:.5} mm, max {:.5} mm",
            loss_sum / batches as f64,
            m.mean_l1,
            m.max_l1
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mean_mm: m.mean_l1,
            val_max_mm: m.max_l1,
        });
        if m.mean_l1 < best.0 {
            best = (m.mean_l1, model.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if history.best_epoch == 0 {
        return Ok((model, history));
    }
    Ok((best.1, history))
}
