use super::layers::{BatchNorm, Conv1d, Linear};
use super::{Forward, Mode, BN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvNetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub pool: usize,
    pub input_len: usize,
    /// Stride of the stem convolution.
    pub stem_stride: usize,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        Self {
            channels: 20,
            blocks: 4,
            kernel: 5,
            pool: 8,
            input_len: 256,
            stem_stride: 2,
        }
    }
}

impl ConvNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.blocks == 0 {
            return bad("ConvNet needs at least one channel and one residual block".into());
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd for same padding".into());
        }
        if self.stem_stride == 0 || self.input_len % self.stem_stride != 0 {
            return bad(format!("stem stride {} must divide the input length", self.stem_stride));
        }
        let l = self.input_len / self.stem_stride;
        if self.pool == 0 || l % self.pool != 0 {
            return bad(format!("pool window {} must divide the stem output length {l}", self.pool));
        }
        Ok(())
    }

    /// Length of the feature maps inside the residual blocks.
    pub fn inner_len(&self) -> usize {
        self.input_len / self.stem_stride
    }
}

/// `conv → BN → ReLU → conv → BN`, plus the identity skip and a final
/// ReLU. A `None` batch norm has been folded into its conv.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv1d,
    pub bn1: Option<BatchNorm>,
    pub conv2: Conv1d,
    pub bn2: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub cfg: ConvNetConfig,
    pub stem: Conv1d,
    pub blocks: Vec<ResBlock>,
    pub head: Linear,
}

impl ConvNet {
    pub fn build(cfg: ConvNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (cfg.channels, cfg.kernel);
        let stem = Conv1d::init(&mut rng, 2, c, k, cfg.stem_stride, k / 2);
        let blocks = (0..cfg.blocks)
            .map(|_| ResBlock {
                conv1: Conv1d::init(&mut rng, c, c, k, 1, k / 2),
                bn1: Some(BatchNorm::identity(c)),
                conv2: Conv1d::init(&mut rng, c, c, k, 1, k / 2),
                bn2: Some(BatchNorm::identity(c)),
            })
            .collect();
        let head = Linear::init(&mut rng, c * cfg.inner_len() / cfg.pool, 1);
        Ok(Self { cfg, stem, blocks, head })
    }

    pub fn is_folded(&self) -> bool {
        self.blocks.iter().all(|b| b.bn1.is_none() && b.bn2.is_none())
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.blocks.iter().flat_map(|b| [b.bn1.as_ref(), b.bn2.as_ref()]).flatten().collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        self.blocks.iter_mut().flat_map(|b| [b.bn1.as_mut(), b.bn2.as_mut()]).flatten().collect()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("stem.weight".to_string(), &self.stem.weight), ("stem.bias".to_string(), &self.stem.bias)];
        for (j, blk) in self.blocks.iter().enumerate() {
            for (s, conv, bn) in [(1, &blk.conv1, &blk.bn1), (2, &blk.conv2, &blk.bn2)] {
                out.push((format!("block{j}.conv{s}.weight"), &conv.weight));
                out.push((format!("block{j}.conv{s}.bias"), &conv.bias));
                if let Some(bn) = bn {
                    out.push((format!("block{j}.bn{s}.gamma"), &bn.gamma));
                    out.push((format!("block{j}.bn{s}.beta"), &bn.beta));
                }
            }
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.stem.weight, &mut self.stem.bias];
        for blk in &mut self.blocks {
            for (conv, bn) in [(&mut blk.conv1, &mut blk.bn1), (&mut blk.conv2, &mut blk.bn2)] {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
                if let Some(bn) = bn {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Running statistics, named like the parameters.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (j, blk) in self.blocks.iter().enumerate() {
            for (s, bn) in [(1, &blk.bn1), (2, &blk.bn2)] {
                if let Some(bn) = bn {
                    let c = bn.channels();
                    out.push((
                        format!("block{j}.bn{s}.running_mean"),
                        Tensor::new(vec![c], bn.running_mean.clone()).expect("length c"),
                    ));
                    out.push((
                        format!("block{j}.bn{s}.running_std"),
                        Tensor::new(vec![c], bn.running_std.clone()).expect("length c"),
                    ));
                }
            }
        }
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, mode: Mode) -> Result<Forward> {
        let mut it = p.iter().copied();
        let mut next = || it.next().ok_or_else(|| Error::State("parameter list too short".into()));
        let mut bn_inputs = Vec::new();
        let mut batch_stats = Vec::new();
        let (w, b) = (next()?, next()?);
        let h = g.conv1d(x, w, Some(b), self.stem.stride, self.stem.pad)?;
        let mut h = g.relu(h);
        for blk in &self.blocks {
            let mut y = h;
            for (s, (conv, bn)) in [(&blk.conv1, &blk.bn1), (&blk.conv2, &blk.bn2)].into_iter().enumerate() {
                let (w, b) = (next()?, next()?);
                y = g.conv1d(y, w, Some(b), conv.stride, conv.pad)?;
                if let Some(bn) = bn {
                    let (gamma, beta) = (next()?, next()?);
                    bn_inputs.push(y);
                    y = match mode {
                        Mode::Train => {
                            let (out, stats) = g.batch_norm_train(y, gamma, beta, BN_EPS)?;
                            batch_stats.push(stats);
                            out
                        }
                        Mode::Eval => g.batch_norm_eval(y, gamma, beta, &bn.running_mean, &bn.running_std, BN_EPS)?,
                    };
                }
                if s == 0 {
                    y = g.relu(y);
                }
            }
            let sum = g.add(y, h)?;
            h = g.relu(sum);
        }
        let pooled = g.avgpool1d(h, self.cfg.pool)?;
        let bsz = g.shape(pooled)[0];
        let flat = g.reshape(pooled, &[bsz, self.cfg.channels * self.cfg.inner_len() / self.cfg.pool])?;
        let (w, b) = (next()?, next()?);
        let output = g.linear(flat, w, Some(b))?;
        Ok(Forward {
            output,
            bn_inputs,
            batch_stats,
        })
    }

    pub fn macs(&self, l: usize) -> usize {
        let inner = self.stem.out_len(l);
        let blocks: usize = self.blocks.iter().map(|b| b.conv1.macs(inner) + b.conv2.macs(inner)).sum();
        self.stem.macs(l) + blocks + self.head.macs()
    }
}
