//! Minimal deterministic tensors with tape-based reverse-mode autodiff.
//!
//! Only the operations the two excursion networks need are provided. Every
//! graph operation takes a leading batch dimension; the per-sample kernels
//! live in [`kernels`].

pub mod fft;
mod graph;
pub mod kernels;

pub use graph::{BatchStats, FftNorm, Gradients, Graph, Var};

use crate::error::{shape, Result};
use num_complex::Complex64;

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(&shape, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err(shape, self.data.len()));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

fn shape_err(dims: &[usize], len: usize) -> crate::error::Error {
    shape(format!("shape {dims:?} does not hold {len} elements"))
}

/// Complex spectrum of a multi-channel real signal, `[channels, modes]`
/// for both the real and the imaginary plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexSpectrum {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() || re.shape().len() != 2 {
            return Err(shape(format!(
                "spectrum planes must share a [channels, modes] shape, got {:?} and {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn channels(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn modes(&self) -> usize {
        self.re.shape()[1]
    }

    pub fn get(&self, c: usize, m: usize) -> Complex64 {
        let i = c * self.modes() + m;
        Complex64::new(self.re.data()[i], self.im.data()[i])
    }

    /// Stacked `[2, channels, modes]` layout used inside the graph
    /// (real and imaginary parts spliced along the channel axis).
    pub fn to_stacked(&self) -> Tensor {
        let mut data = self.re.data().to_vec();
        data.extend_from_slice(self.im.data());
        Tensor::new(vec![2, self.channels(), self.modes()], data).expect("consistent planes")
    }

    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        let (c, m) = match s {
            [2, c, m] => (*c, *m),
            [1, 2, c, m] => (*c, *m),
            _ => return Err(shape(format!("expected [2, C, M] spectrum, got {s:?}"))),
        };
        let (re, im) = t.data().split_at(c * m);
        Ok(Self {
            re: Tensor::new(vec![c, m], re.to_vec())?,
            im: Tensor::new(vec![c, m], im.to_vec())?,
        })
    }
}

/// Real FFT of every channel of `x: [C, N]`, keeping all `N/2 + 1` bins.
pub fn fft_r2c(x: &Tensor) -> Result<ComplexSpectrum> {
    let [c, n] = x.shape() else {
        return Err(shape(format!("fft_r2c expects [C, N], got {:?}", x.shape())));
    };
    let plan = fft::FftPlan::new(*n)?;
    let bins = plan.bins();
    let mut re = Vec::with_capacity(c * bins);
    let mut im = Vec::with_capacity(c * bins);
    for row in x.data().chunks(*n) {
        for z in plan.rfft(row)? {
            re.push(z.re);
            im.push(z.im);
        }
    }
    ComplexSpectrum::new(Tensor::new(vec![*c, bins], re)?, Tensor::new(vec![*c, bins], im)?)
}

/// Inverse of [`fft_r2c`]; spectra with fewer than `N/2 + 1` modes are
/// zero-extended.
pub fn ifft_c2r(spec: &ComplexSpectrum, n: usize) -> Result<Tensor> {
    let plan = fft::FftPlan::new(n)?;
    let (c, m) = (spec.channels(), spec.modes());
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        let bins: Vec<Complex64> = (0..m).map(|k| spec.get(ch, k)).collect();
        out.extend(plan.irfft(&bins)?);
    }
    Tensor::new(vec![c, n], out)
}

/// Truncates a spectrum to its lowest `modes` bins and mixes channels per
/// mode with complex weights `phi` (`[2, C, C]` shared or `[M, 2, C, C]`).
pub fn mode_mix(spec: &ComplexSpectrum, phi: &Tensor, modes: usize) -> Result<ComplexSpectrum> {
    let (c, full) = (spec.channels(), spec.modes());
    if modes > full {
        return Err(crate::error::validation(format!(
            "{modes} retained modes exceed the {full} available"
        )));
    }
    let per_mode = check_phi(phi, c, modes)?;
    let mut stacked = vec![0.0; 2 * c * modes];
    for ch in 0..c {
        for k in 0..modes {
            let z = spec.get(ch, k);
            stacked[ch * modes + k] = z.re;
            stacked[c * modes + ch * modes + k] = z.im;
        }
    }
    let mut out = vec![0.0; 2 * c * modes];
    kernels::mode_mix_forward(&stacked, phi.data(), c, modes, per_mode, &mut out);
    ComplexSpectrum::from_stacked(&Tensor::new(vec![2, c, modes], out)?)
}

/// Validates a mode-mixing weight tensor; returns whether it is per-mode.
pub(crate) fn check_phi(phi: &Tensor, c: usize, m: usize) -> Result<bool> {
    match phi.shape() {
        [2, a, b] if *a == c && *b == c => Ok(false),
        [mm, 2, a, b] if *mm == m && *a == c && *b == c => Ok(true),
        s => Err(shape(format!(
            "mode-mix weights must be [2, {c}, {c}] or [{m}, 2, {c}, {c}], got {s:?}"
        ))),
    }
}
