//! Radix-2 real FFT.
//!
//! The forward transform keeps the `N/2 + 1` non-redundant bins of a real
//! sequence. The inverse treats its input as the lower half of a Hermitian
//! spectrum; bins that are not supplied are zero, and the imaginary parts of
//! the DC and Nyquist bins are ignored.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal table for one power-of-two length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::UnsupportedSize(n));
        }
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of non-redundant bins of a real transform, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// In-place complex FFT. `inverse` flips the twiddle sign; no scaling
    /// is applied in either direction.
    pub fn complex_inplace(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.n {
            let step = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }

    /// Real-to-complex forward transform: `X_k = Σ x_n e^{-2πikn/N}` for
    /// `k = 0..=N/2`.
    pub fn rfft(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n {
            return Err(Error::Shape(format!(
                "rfft input length {} does not match plan length {}",
                x.len(),
                self.n
            )));
        }
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.complex_inplace(&mut buf, false);
        buf.truncate(self.bins());
        Ok(buf)
    }

    /// Unnormalized Hermitian synthesis: `Σ_k w_k Re(X_k e^{2πikn/N})` with
    /// `w_0 = w_{N/2} = 1` and `w_k = 2` otherwise. Bins beyond
    /// `spec.len()` are zero.
    pub fn hermitian_synth(&self, spec: &[Complex64]) -> Result<Vec<f64>> {
        let bins = self.bins();
        if spec.len() > bins {
            return Err(Error::Validation(format!(
                "{} bins supplied but a length-{} real signal has only {}",
                spec.len(),
                self.n,
                bins
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (k, &c) in spec.iter().enumerate() {
            if k == 0 || k == self.n / 2 {
                buf[k] = Complex64::new(c.re, 0.0);
            } else {
                buf[k] = c;
                buf[self.n - k] = c.conj();
            }
        }
        self.complex_inplace(&mut buf, true);
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// Complex-to-real inverse with `1/N` scaling, so that
    /// `irfft(rfft(x)) == x`.
    pub fn irfft(&self, spec: &[Complex64]) -> Result<Vec<f64>> {
        let scale = 1.0 / self.n as f64;
        let mut out = self.hermitian_synth(spec)?;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }

    /// Hermitian fold weight of bin `k`.
    pub fn fold_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n / 2 {
            1.0
        } else {
            2.0
        }
    }
}

/// Convenience wrapper around [`FftPlan::rfft`].
pub fn fft_r2c(x: &[f64]) -> Result<Vec<Complex64>> {
    FftPlan::new(x.len())?.rfft(x)
}

/// Convenience wrapper around [`FftPlan::irfft`].
pub fn ifft_c2r(spec: &[Complex64], n: usize) -> Result<Vec<f64>> {
    FftPlan::new(n)?.irfft(spec)
}
