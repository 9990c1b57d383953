use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[C_out, C_in, K]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    /// He-uniform weights, zero bias.
    pub(crate) fn init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        let bound = (6.0 / (c_in * k) as f64).sqrt();
        Self {
            weight: uniform(rng, &[c_out, c_in, k], bound),
            bias: Tensor::zeros(&[c_out]),
            stride,
            pad,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.pad - self.kernel()) / self.stride + 1
    }

    pub fn macs(&self, l_in: usize) -> usize {
        self.weight.len() * self.out_len(l_in)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[F_out, F_in]`
    pub weight: Tensor,
    /// `[F_out]`
    pub bias: Tensor,
}

impl Linear {
    pub(crate) fn init(rng: &mut ChaCha8Rng, f_in: usize, f_out: usize) -> Self {
        Self {
            weight: uniform(rng, &[f_out, f_in], 1.0 / (f_in as f64).sqrt()),
            bias: Tensor::zeros(&[f_out]),
        }
    }

    pub fn macs(&self) -> usize {
        self.weight.len()
    }
}

/// Batch norm over the channel axis with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    /// Running standard deviation (not variance).
    pub running_std: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: vec![0.0; c],
            running_std: vec![1.0; c],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential update of the running statistics with batch statistics.
    pub fn track(&mut self, mean: &[f64], std: &[f64], momentum: f64) {
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, s) in self.running_std.iter_mut().zip(std) {
            *r = (1.0 - momentum) * *r + momentum * s;
        }
    }
}
