use num_complex::Complex64;

use super::fft::FftPlan;
use super::kernels::{self, AttnCache, AttnGrads, AttnWeights, ConvGeom};
use super::{check_phi, Tensor};
use crate::error::{shape, validation, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Scaling convention of the spectral ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftNorm {
    /// Unscaled forward, `1/N` inverse.
    Backward,
    /// `1/√N` in both directions.
    Ortho,
}

impl FftNorm {
    fn forward_factor(self, n: usize) -> f64 {
        match self {
            FftNorm::Backward => 1.0,
            FftNorm::Ortho => 1.0 / (n as f64).sqrt(),
        }
    }

    fn inverse_factor(self, n: usize) -> f64 {
        match self {
            FftNorm::Backward => 1.0 / n as f64,
            FftNorm::Ortho => 1.0 / (n as f64).sqrt(),
        }
    }
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        f_in: usize,
        f_out: usize,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    DotConst(Var, Vec<f64>),
    AvgPool {
        x: Var,
        window: usize,
    },
    Reshape(Var),
    Transpose12 {
        x: Var,
        p: usize,
        q: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        c: usize,
        l: usize,
    },
    Rfft {
        x: Var,
        n: usize,
        modes: usize,
        factor: f64,
    },
    Irfft {
        x: Var,
        n: usize,
        modes: usize,
        factor: f64,
    },
    ModeMix {
        spec: Var,
        phi: Var,
        c: usize,
        m: usize,
        per_mode: bool,
    },
    Attention {
        x: Var,
        w: [Var; 8],
        m: usize,
        d: usize,
        heads: usize,
        caches: Vec<AttnCache>,
    },
    ScaledQuartic {
        pred: Var,
        target: Vec<f64>,
        delta: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) standard deviation per channel.
    pub std_unbiased: Vec<f64>,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order;
/// [`Graph::backward`] consumes the tape.
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
    macs: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A tape that records everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true, macs: 0 }
    }

    /// A tape for inference only; backward is refused.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false, macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Multiply-accumulates performed so far by conv, linear, attention and
    /// mode-mix nodes.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf without gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        let rg = self.record;
        self.push(t, Op::Leaf, rg)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        self.record && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// `x: [B, C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (bsz, c_in, l) = match self.shape(x) {
            &[b, c, l] => (b, c, l),
            s => return Err(shape(format!("conv1d input must be [B, C, L], got {s:?}"))),
        };
        let (c_out, k) = match self.shape(w) {
            &[co, ci, k] if ci == c_in => (co, k),
            s => return Err(shape(format!("conv1d weights {s:?} do not match {c_in} input channels"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape(format!("conv1d bias must be [{c_out}], got {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c_in, c_out, k, stride, pad, l)?;
        self.macs += (bsz * geom.macs()) as u64;
        let mut out = vec![0.0; bsz * c_out * geom.l_out];
        {
            let (xd, wd) = (self.data(x), self.data(w));
            let bd = b.map(|b| self.data(b));
            for (s, o) in out.chunks_mut(c_out * geom.l_out).enumerate() {
                kernels::conv1d_forward(&geom, &xd[s * c_in * l..(s + 1) * c_in * l], wd, bd, o);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(
            Tensor::new(vec![bsz, c_out, geom.l_out], out)?,
            Op::Conv1d { x, w, b, geom },
            rg,
        ))
    }

    /// `x: [B, F_in]`, `w: [F_out, F_in]`, `b: [F_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bsz, f_in) = match self.shape(x) {
            &[b, f] => (b, f),
            s => return Err(shape(format!("linear input must be [B, F], got {s:?}"))),
        };
        let f_out = match self.shape(w) {
            &[o, i] if i == f_in => o,
            s => return Err(shape(format!("linear weights {s:?} do not match {f_in} features"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [f_out] {
                return Err(shape(format!("linear bias must be [{f_out}]")));
            }
        }
        self.macs += (bsz * f_in * f_out) as u64;
        let mut out = vec![0.0; bsz * f_out];
        kernels::linear_rows(self.data(x), self.data(w), b.map(|b| self.data(b)), f_in, f_out, &mut out);
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(Tensor::new(vec![bsz, f_out], out)?, Op::Linear { x, w, b, f_in, f_out }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape(format!("add of {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape(format!("mul of {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `Σ x_i c_i` for a constant vector `c`, as a scalar.
    pub fn dot_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(shape("dot_const length mismatch"));
        }
        let s = self.data(x).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(x, c), rg))
    }

    /// Non-overlapping average pooling over the last axis of `[B, C, L]`.
    pub fn avgpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (b, c, l) = match self.shape(x) {
            &[b, c, l] => (b, c, l),
            s => return Err(shape(format!("avgpool1d input must be [B, C, L], got {s:?}"))),
        };
        if window == 0 || l % window != 0 {
            return Err(shape(format!("avgpool1d window {window} does not divide length {l}")));
        }
        let inv = 1.0 / window as f64;
        let data = self.data(x).chunks(window).map(|w| w.iter().sum::<f64>() * inv).collect();
        let t = Tensor::new(vec![b, c, l / window], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::AvgPool { x, window }, rg))
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(new_shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `[B, P, Q] → [B, Q, P]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let (b, p, q) = match self.shape(x) {
            &[b, p, q] => (b, p, q),
            s => return Err(shape(format!("transpose12 expects a rank-3 tensor, got {s:?}"))),
        };
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for s in 0..b {
            let base = s * p * q;
            for i in 0..p {
                for j in 0..q {
                    out[base + j * p + i] = src[base + i * q + j];
                }
            }
        }
        let t = Tensor::new(vec![b, q, p], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose12 { x, p, q }, rg))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(shape(format!("batchnorm input must be [B, C, ...], got {s:?}")));
        }
        let (b, c) = (s[0], s[1]);
        let l: usize = s[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape(format!("batchnorm affine parameters must be [{c}]")));
        }
        Ok((b, c, l))
    }

    /// Training-mode batch norm: normalizes each channel by its statistics
    /// over batch and length, `y = γ (x − mean)/√(var + eps) + β`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (b, c, l) = self.bn_dims(x, gamma, beta)?;
        let count = b * l;
        if count < 2 {
            return Err(validation("training-mode batch norm needs at least two values per channel"));
        }
        let xd = self.data(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                s += xd[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().sum::<f64>();
            }
            let mu = s / count as f64;
            let mut ss = 0.0;
            for bi in 0..b {
                ss += xd[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                    .iter()
                    .map(|v| (v - mu) * (v - mu))
                    .sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = ss / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let std_unbiased = var.iter().map(|v| (v * count as f64 / (count - 1) as f64).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, true, (b, c, l))?;
        Ok((out, BatchStats { mean, std_unbiased }))
    }

    /// Inference-mode batch norm with fixed statistics,
    /// `y = γ (x − μ)/√(σ² + eps) + β`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        std: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let dims = self.bn_dims(x, gamma, beta)?;
        if mean.len() != dims.1 || std.len() != dims.1 {
            return Err(shape("batchnorm running statistics length mismatch"));
        }
        if let Some(bad) = std.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(validation(format!("batchnorm channel {bad} has invalid sigma {}", std[bad])));
        }
        let inv_std: Vec<f64> = std.iter().map(|s| 1.0 / (s * s + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, &inv_std, false, dims)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        train: bool,
        (b, c, l): (usize, usize, usize),
    ) -> Result<Var> {
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                for ((xh, o), v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xd[r]) {
                    *xh = (v - mean[ch]) * inv_std[ch];
                    *o = gd[ch] * *xh + bd[ch];
                }
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        if !rg {
            xhat = Vec::new();
        }
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                train,
                c,
                l,
            },
            rg,
        ))
    }

    /// Real FFT of `[B, C, N]` truncated to the lowest `modes` bins, laid out
    /// as `[B, 2, C, modes]` (real plane, then imaginary plane).
    pub fn rfft(&mut self, x: Var, modes: usize, norm: FftNorm) -> Result<Var> {
        let (b, c, n) = match self.shape(x) {
            &[b, c, n] => (b, c, n),
            s => return Err(shape(format!("rfft input must be [B, C, N], got {s:?}"))),
        };
        let plan = FftPlan::new(n)?;
        if modes == 0 || modes > plan.bins() {
            return Err(validation(format!("{modes} modes requested, 1..={} available", plan.bins())));
        }
        let factor = norm.forward_factor(n);
        let xd = self.data(x);
        let mut out = vec![0.0; b * 2 * c * modes];
        for s in 0..b {
            for ch in 0..c {
                let spec = plan.rfft(&xd[(s * c + ch) * n..(s * c + ch + 1) * n])?;
                for k in 0..modes {
                    out[((s * 2) * c + ch) * modes + k] = spec[k].re * factor;
                    out[((s * 2 + 1) * c + ch) * modes + k] = spec[k].im * factor;
                }
            }
        }
        let t = Tensor::new(vec![b, 2, c, modes], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Rfft { x, n, modes, factor }, rg))
    }

    /// Inverse of [`Graph::rfft`]: `[B, 2, C, M] → [B, C, n]`, bins at and
    /// above `M` treated as zero.
    pub fn irfft(&mut self, x: Var, n: usize, norm: FftNorm) -> Result<Var> {
        let (b, c, modes) = match self.shape(x) {
            &[b, 2, c, m] => (b, c, m),
            s => return Err(shape(format!("irfft input must be [B, 2, C, M], got {s:?}"))),
        };
        let plan = FftPlan::new(n)?;
        if modes > plan.bins() {
            return Err(validation(format!("{modes} modes exceed the {} bins of length {n}", plan.bins())));
        }
        let factor = norm.inverse_factor(n);
        let xd = self.data(x);
        let mut out = vec![0.0; b * c * n];
        let mut bins = vec![Complex64::new(0.0, 0.0); modes];
        for s in 0..b {
            for ch in 0..c {
                for (k, z) in bins.iter_mut().enumerate() {
                    *z = Complex64::new(
                        xd[((s * 2) * c + ch) * modes + k],
                        xd[((s * 2 + 1) * c + ch) * modes + k],
                    );
                }
                let sig = plan.hermitian_synth(&bins)?;
                for (o, v) in out[(s * c + ch) * n..(s * c + ch + 1) * n].iter_mut().zip(sig) {
                    *o = v * factor;
                }
            }
        }
        let t = Tensor::new(vec![b, c, n], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Irfft { x, n, modes, factor }, rg))
    }

    /// Per-mode complex channel mixing of a `[B, 2, C, M]` spectrum.
    pub fn mode_mix(&mut self, spec: Var, phi: Var) -> Result<Var> {
        let (b, c, m) = match self.shape(spec) {
            &[b, 2, c, m] => (b, c, m),
            s => return Err(shape(format!("mode_mix input must be [B, 2, C, M], got {s:?}"))),
        };
        let per_mode = check_phi(self.value(phi), c, m)?;
        self.macs += (b * 4 * c * c * m) as u64;
        let per = 2 * c * m;
        let mut out = vec![0.0; b * per];
        {
            let (sd, pd) = (self.data(spec), self.data(phi));
            for (s, o) in out.chunks_mut(per).enumerate() {
                kernels::mode_mix_forward(&sd[s * per..(s + 1) * per], pd, c, m, per_mode, o);
            }
        }
        let t = Tensor::new(vec![b, 2, c, m], out)?;
        let rg = self.rg(&[spec, phi]);
        Ok(self.push(t, Op::ModeMix { spec, phi, c, m, per_mode }, rg))
    }

    /// Multi-head self-attention over tokens `x: [B, M, D]`.
    /// `w` = `[wq, bq, wk, bk, wv, bv, wo, bo]`.
    pub fn attention(&mut self, x: Var, w: [Var; 8], heads: usize) -> Result<Var> {
        let (b, m, d) = match self.shape(x) {
            &[b, m, d] => (b, m, d),
            s => return Err(shape(format!("attention input must be [B, M, D], got {s:?}"))),
        };
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model width {d} is not divisible by {heads} heads")));
        }
        for (i, v) in w.iter().enumerate() {
            let want: &[usize] = if i % 2 == 0 { &[d, d] } else { &[d] };
            if self.shape(*v) != want {
                return Err(shape(format!("attention parameter {i} must be {want:?}")));
            }
        }
        self.macs += (b * (4 * m * d * d + 2 * m * m * d)) as u64;
        let rg = self.rg(&[x, w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7]]);
        let per = m * d;
        let mut out = vec![0.0; b * per];
        let mut caches = Vec::with_capacity(if rg { b } else { 0 });
        {
            let aw = self.attn_weights(&w);
            let xd = self.data(x);
            for (s, o) in out.chunks_mut(per).enumerate() {
                let cache = kernels::attention_forward(&xd[s * per..(s + 1) * per], m, d, heads, &aw, o);
                if rg {
                    caches.push(cache);
                }
            }
        }
        let t = Tensor::new(vec![b, m, d], out)?;
        Ok(self.push(t, Op::Attention { x, w, m, d, heads, caches }, rg))
    }

    fn attn_weights(&self, w: &[Var; 8]) -> AttnWeights<'_> {
        AttnWeights {
            wq: self.data(w[0]),
            bq: self.data(w[1]),
            wk: self.data(w[2]),
            bk: self.data(w[3]),
            wv: self.data(w[4]),
            bv: self.data(w[5]),
            wo: self.data(w[6]),
            bo: self.data(w[7]),
        }
    }

    /// `mean_i δ (target_i − pred_i)^4`, as a scalar.
    pub fn scaled_quartic(&mut self, pred: Var, target: &[f64], delta: f64) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(shape(format!(
                "prediction batch of {} does not match {} targets",
                p.len(),
                target.len()
            )));
        }
        let loss = p
            .iter()
            .zip(target)
            .map(|(p, t)| delta * (t - p).powi(4))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::ScaledQuartic { pred, target: target.to_vec(), delta },
            rg,
        ))
    }

    /// Runs reverse-mode differentiation from the scalar `loss` and
    /// consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::State("backward called on an inference-only graph".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before the forward pass recorded the loss".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if matches!(n.op, Op::Leaf) && n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (xd, wd) = (self.data(*x), self.data(*w));
                let bsz = nodes[i].value.shape()[0];
                let (xs, os) = (geom.c_in * geom.l_in, geom.c_out * geom.l_out);
                let mut gx = self.needs(*x).then(|| vec![0.0; xd.len()]);
                let mut gw = self.needs(*w).then(|| vec![0.0; wd.len()]);
                let mut gb = b.filter(|b| self.needs(*b)).map(|_| vec![0.0; geom.c_out]);
                for s in 0..bsz {
                    kernels::conv1d_backward(
                        geom,
                        &xd[s * xs..(s + 1) * xs],
                        wd,
                        &g[s * os..(s + 1) * os],
                        gx.as_mut().map(|v| &mut v[s * xs..(s + 1) * xs]),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                }
                if let Some(gx) = gx {
                    acc(*x, &mut |buf| add_into(buf, &gx));
                }
                if let Some(gw) = gw {
                    acc(*w, &mut |buf| add_into(buf, &gw));
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(*b, &mut |buf| add_into(buf, &gb));
                }
            }
            Op::Linear { x, w, b, f_in, f_out } => {
                let (xd, wd) = (self.data(*x), self.data(*w));
                let mut gx = self.needs(*x).then(|| vec![0.0; xd.len()]);
                let mut gw = self.needs(*w).then(|| vec![0.0; wd.len()]);
                let mut gb = b.filter(|b| self.needs(*b)).map(|_| vec![0.0; *f_out]);
                kernels::linear_rows_backward(
                    xd,
                    wd,
                    g,
                    *f_in,
                    *f_out,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    acc(*x, &mut |buf| add_into(buf, &gx));
                }
                if let Some(gw) = gw {
                    acc(*w, &mut |buf| add_into(buf, &gw));
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(*b, &mut |buf| add_into(buf, &gb));
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |buf| {
                    for ((o, gv), xv) in buf.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |buf| {
                    for ((o, gv), bv) in buf.iter_mut().zip(g).zip(bd) {
                        *o += gv * bv;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((o, gv), av) in buf.iter_mut().zip(g).zip(ad) {
                        *o += gv * av;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |buf| buf.iter_mut().for_each(|o| *o += g[0])),
            Op::DotConst(x, c) => acc(*x, &mut |buf| {
                for (o, cv) in buf.iter_mut().zip(c) {
                    *o += g[0] * cv;
                }
            }),
            Op::AvgPool { x, window } => {
                let inv = 1.0 / *window as f64;
                acc(*x, &mut |buf| {
                    for (chunk, gv) in buf.chunks_mut(*window).zip(g) {
                        chunk.iter_mut().for_each(|o| *o += gv * inv);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |buf| add_into(buf, g)),
            Op::Transpose12 { x, p, q } => {
                let (p, q) = (*p, *q);
                acc(*x, &mut |buf| {
                    for (s, chunk) in buf.chunks_mut(p * q).enumerate() {
                        let gs = &g[s * p * q..(s + 1) * p * q];
                        for i in 0..p {
                            for j in 0..q {
                                chunk[i * q + j] += gs[j * p + i];
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, c, l } => {
                let (c, l) = (*c, *l);
                let b = g.len() / (c * l);
                let gd = self.data(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                        for (gv, xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            sum_g[ch] += gv;
                            sum_gx[ch] += gv * xh;
                        }
                    }
                }
                acc(*gamma, &mut |buf| add_into(buf, &sum_gx));
                acc(*beta, &mut |buf| add_into(buf, &sum_g));
                let count = (b * l) as f64;
                acc(*x, &mut |buf| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                            let k = gd[ch] * inv_std[ch];
                            for ((o, gv), xh) in buf[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                if *train {
                                    *o += k * (gv - sum_g[ch] / count - xh * sum_gx[ch] / count);
                                } else {
                                    *o += k * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Rfft { x, n, modes, factor } => {
                let plan = FftPlan::new(*n).expect("validated in forward");
                let c = nodes[i].value.shape()[2];
                let b = nodes[i].value.shape()[0];
                let mut bins = vec![Complex64::new(0.0, 0.0); *modes];
                acc(*x, &mut |buf| {
                    for s in 0..b {
                        for ch in 0..c {
                            for (k, z) in bins.iter_mut().enumerate() {
                                let w = plan.fold_weight(k);
                                *z = Complex64::new(
                                    g[((s * 2) * c + ch) * modes + k],
                                    g[((s * 2 + 1) * c + ch) * modes + k],
                                ) / w;
                            }
                            let sig = plan.hermitian_synth(&bins).expect("validated in forward");
                            for (o, v) in buf[(s * c + ch) * n..(s * c + ch + 1) * n].iter_mut().zip(sig) {
                                *o += v * factor;
                            }
                        }
                    }
                });
            }
            Op::Irfft { x, n, modes, factor } => {
                let plan = FftPlan::new(*n).expect("validated in forward");
                let (b, c) = (nodes[i].value.shape()[0], nodes[i].value.shape()[1]);
                acc(*x, &mut |buf| {
                    for s in 0..b {
                        for ch in 0..c {
                            let spec = plan.rfft(&g[(s * c + ch) * n..(s * c + ch + 1) * n]).expect("sized");
                            for k in 0..*modes {
                                let w = plan.fold_weight(k) * factor;
                                buf[((s * 2) * c + ch) * modes + k] += spec[k].re * w;
                                // Imaginary parts of the DC and Nyquist bins do not reach the output.
                                if k != 0 && k != n / 2 {
                                    buf[((s * 2 + 1) * c + ch) * modes + k] += spec[k].im * w;
                                }
                            }
                        }
                    }
                });
            }
            Op::ModeMix { spec, phi, c, m, per_mode } => {
                let (sd, pd) = (self.data(*spec), self.data(*phi));
                let per = 2 * c * m;
                let mut gs = self.needs(*spec).then(|| vec![0.0; sd.len()]);
                let mut gp = self.needs(*phi).then(|| vec![0.0; pd.len()]);
                for s in 0..sd.len() / per {
                    kernels::mode_mix_backward(
                        &sd[s * per..(s + 1) * per],
                        pd,
                        *c,
                        *m,
                        *per_mode,
                        &g[s * per..(s + 1) * per],
                        gs.as_mut().map(|v| &mut v[s * per..(s + 1) * per]),
                        gp.as_deref_mut(),
                    );
                }
                if let Some(gs) = gs {
                    acc(*spec, &mut |buf| add_into(buf, &gs));
                }
                if let Some(gp) = gp {
                    acc(*phi, &mut |buf| add_into(buf, &gp));
                }
            }
            Op::Attention { x, w, m, d, heads, caches } => {
                let aw = self.attn_weights(w);
                let xd = self.data(*x);
                let per = m * d;
                let mut gx = self.needs(*x).then(|| vec![0.0; xd.len()]);
                let mut gw: Vec<Option<Vec<f64>>> = w
                    .iter()
                    .map(|v| self.needs(*v).then(|| vec![0.0; nodes[v.0].value.len()]))
                    .collect();
                for (s, cache) in caches.iter().enumerate() {
                    let [gwq, gbq, gwk, gbk, gwv, gbv, gwo, gbo] = &mut gw[..] else { unreachable!() };
                    kernels::attention_backward(
                        &xd[s * per..(s + 1) * per],
                        *m,
                        *d,
                        *heads,
                        &aw,
                        cache,
                        &g[s * per..(s + 1) * per],
                        AttnGrads {
                            x: gx.as_mut().map(|v| &mut v[s * per..(s + 1) * per]),
                            wq: gwq.as_deref_mut(),
                            bq: gbq.as_deref_mut(),
                            wk: gwk.as_deref_mut(),
                            bk: gbk.as_deref_mut(),
                            wv: gwv.as_deref_mut(),
                            bv: gbv.as_deref_mut(),
                            wo: gwo.as_deref_mut(),
                            bo: gbo.as_deref_mut(),
                        },
                    );
                }
                if let Some(gx) = gx {
                    acc(*x, &mut |buf| add_into(buf, &gx));
                }
                for (v, gv) in w.iter().zip(gw) {
                    if let Some(gv) = gv {
                        acc(*v, &mut |buf| add_into(buf, &gv));
                    }
                }
            }
            Op::ScaledQuartic { pred, target, delta } => {
                let p = self.data(*pred);
                let scale = g[0] / p.len() as f64;
                acc(*pred, &mut |buf| {
                    for ((o, pv), t) in buf.iter_mut().zip(p).zip(target) {
                        *o += -4.0 * delta * (t - pv).powi(3) * scale;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of every differentiable leaf, produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; `None` when `v` is not a differentiable leaf or the
    /// loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but returns zeros for unreached leaves.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}
