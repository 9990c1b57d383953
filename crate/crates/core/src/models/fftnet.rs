use super::layers::{uniform, Conv1d, Linear};
use super::{Forward, Mode};
use crate::error::{Error, Result};
use crate::tensor::{FftNorm, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FftNetConfig {
    pub channels: usize,
    pub blocks: usize,
    /// Retained low-frequency bins per FAOL.
    pub modes: usize,
    pub heads: usize,
    pub kernel: usize,
    pub pool: usize,
    pub input_len: usize,
    /// One mixing matrix per retained mode instead of one shared matrix.
    pub per_mode: bool,
}

impl Default for FftNetConfig {
    fn default() -> Self {
        Self {
            channels: 6,
            blocks: 3,
            modes: 64,
            heads: 2,
            kernel: 5,
            pool: 8,
            input_len: 256,
            per_mode: false,
        }
    }
}

impl FftNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.blocks == 0 {
            return bad("FFTNet needs at least one channel and one FAOL block".into());
        }
        if self.heads == 0 || (2 * self.channels) % self.heads != 0 {
            return bad(format!("2·C = {} is not divisible by {} heads", 2 * self.channels, self.heads));
        }
        if !self.input_len.is_power_of_two() || self.input_len < 2 {
            return bad(format!("input length {} must be a power of two", self.input_len));
        }
        if self.modes == 0 || self.modes > self.input_len / 2 + 1 {
            return bad(format!("modes must lie in 1..={}", self.input_len / 2 + 1));
        }
        if self.kernel % 2 == 0 {
            return bad("stem kernel must be odd for same padding".into());
        }
        if self.pool == 0 || self.input_len % self.pool != 0 {
            return bad(format!("pool window {} must divide the input length", self.pool));
        }
        Ok(())
    }
}

/// One Fourier attention operator layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Faol {
    /// `[wq, bq, wk, bk, wv, bv, wo, bo]` over `2C`-wide mode tokens.
    pub attn: [Tensor; 8],
    /// `[2, C, C]` or `[M, 2, C, C]` complex mixing weights.
    pub phi: Tensor,
    /// Pointwise skip path.
    pub psi: Conv1d,
}

const ATTN_NAMES: [&str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

impl Faol {
    fn init(rng: &mut ChaCha8Rng, cfg: &FftNetConfig) -> Self {
        let (c, d) = (cfg.channels, 2 * cfg.channels);
        let xavier = (3.0 / d as f64).sqrt();
        let attn = std::array::from_fn(|k| {
            if k % 2 == 0 {
                uniform(rng, &[d, d], if k == 6 { 0.5 * xavier } else { xavier })
            } else {
                Tensor::zeros(&[d])
            }
        });
        let shape: Vec<usize> = if cfg.per_mode { vec![cfg.modes, 2, c, c] } else { vec![2, c, c] };
        let mut phi = uniform(rng, &shape, 0.5 / c as f64);
        let per = 2 * c * c;
        for block in phi.data_mut().chunks_mut(per) {
            for j in 0..c {
                block[j * c + j] += 1.0;
            }
        }
        Self {
            attn,
            phi,
            psi: Conv1d::init(rng, c, c, 1, 1, 0),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.attn.iter().chain([&self.phi, &self.psi.weight, &self.psi.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.attn
            .iter_mut()
            .chain([&mut self.phi, &mut self.psi.weight, &mut self.psi.bias])
    }
}

/// The FAOL computation on `g: [B, C, L]`. `p` holds the attention
/// parameters, the mixing weights and the pointwise conv, in that order.
///
/// Branch A takes the orthonormal real FFT truncated to `modes`, treats each
/// mode as a `2C`-wide token (real parts then imaginary parts), applies
/// residual self-attention, mixes channels per mode and transforms back.
/// Branch B is `relu(conv1x1(g))`. The output is their sum.
pub fn faol(g: &mut Graph, x: Var, p: &[Var; 11], modes: usize, heads: usize) -> Result<Var> {
    let (b, c, l) = match g.shape(x) {
        &[b, c, l] => (b, c, l),
        s => return Err(crate::error::shape(format!("FAOL input must be [B, C, L], got {s:?}"))),
    };
    let spec = g.rfft(x, modes, FftNorm::Ortho)?;
    let flat = g.reshape(spec, &[b, 2 * c, modes])?;
    let tokens = g.transpose12(flat)?;
    let attended = g.attention(tokens, [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]], heads)?;
    let mixed_in = g.add(tokens, attended)?;
    let back = g.transpose12(mixed_in)?;
    let spec = g.reshape(back, &[b, 2, c, modes])?;
    let mixed = g.mode_mix(spec, p[8])?;
    let a = g.irfft(mixed, l, FftNorm::Ortho)?;
    let skip = g.conv1d(x, p[9], Some(p[10]), 1, 0)?;
    let skip = g.relu(skip);
    g.add(a, skip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FftNet {
    pub cfg: FftNetConfig,
    pub stem: Conv1d,
    pub blocks: Vec<Faol>,
    pub head: Linear,
}

impl FftNet {
    pub fn build(cfg: FftNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Conv1d::init(&mut rng, 2, cfg.channels, cfg.kernel, 1, cfg.kernel / 2);
        let blocks = (0..cfg.blocks).map(|_| Faol::init(&mut rng, &cfg)).collect();
        let head = Linear::init(&mut rng, cfg.channels * cfg.input_len / cfg.pool, 1);
        Ok(Self { cfg, stem, blocks, head })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("stem.weight".to_string(), &self.stem.weight), ("stem.bias".to_string(), &self.stem.bias)];
        for (j, blk) in self.blocks.iter().enumerate() {
            let names = ATTN_NAMES
                .iter()
                .map(|n| format!("faol{j}.attn.{n}"))
                .chain([format!("faol{j}.phi"), format!("faol{j}.psi.weight"), format!("faol{j}.psi.bias")]);
            out.extend(names.zip(blk.tensors()));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.stem.weight, &mut self.stem.bias];
        for blk in &mut self.blocks {
            out.extend(blk.tensors_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, _mode: Mode) -> Result<Forward> {
        let cfg = &self.cfg;
        let mut h = g.conv1d(x, p[0], Some(p[1]), 1, self.stem.pad)?;
        for j in 0..cfg.blocks {
            let w: &[Var; 11] = p[2 + 11 * j..2 + 11 * (j + 1)].try_into().expect("11 FAOL tensors");
            h = faol(g, h, w, cfg.modes, cfg.heads)?;
        }
        let pooled = g.avgpool1d(h, cfg.pool)?;
        let b = g.shape(pooled)[0];
        let flat = g.reshape(pooled, &[b, cfg.channels * cfg.input_len / cfg.pool])?;
        let n = p.len();
        let output = g.linear(flat, p[n - 2], Some(p[n - 1]))?;
        Ok(Forward {
            output,
            bn_inputs: Vec::new(),
            batch_stats: Vec::new(),
        })
    }

    pub fn macs(&self, l: usize) -> usize {
        let cfg = &self.cfg;
        let (c, m, d) = (cfg.channels, cfg.modes, 2 * cfg.channels);
        let attn = 4 * m * d * d + 2 * m * m * d;
        let mix = 4 * c * c * m;
        self.stem.macs(l) + cfg.blocks * (attn + mix + c * c * l) + self.head.macs()
    }
}
