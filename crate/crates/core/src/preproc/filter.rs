//! Second-order Butterworth sections designed with the bilinear transform.

use crate::error::{validation, Result};
use num_complex::Complex64;
use std::f64::consts::{PI, SQRT_2};

/// Biquad coefficients with `a0` normalized to 1:
/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        self.response(freq, fs).norm()
    }

    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Largest pole modulus.
    pub fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }
}

fn prewarp(fs: f64, cutoff: f64) -> Result<f64> {
    if !(fs.is_finite() && fs > 0.0 && cutoff.is_finite() && cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(validation(format!("cutoff {cutoff} Hz must lie in (0, fs/2) for fs = {fs} Hz")));
    }
    Ok((PI * cutoff / fs).tan())
}

/// 2nd-order Butterworth low-pass. Unity gain at DC, 1/√2 at `cutoff`.
pub fn design_lowpass(fs: f64, cutoff: f64) -> Result<BiquadCoeffs> {
    let k = prewarp(fs, cutoff)?;
    let k2 = k * k;
    let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
    let a1 = 2.0 * (k2 - 1.0) * norm;
    let a2 = (1.0 - SQRT_2 * k + k2) * norm;
    // k²·norm, taken from the denominator so the DC gain is exactly one.
    let b0 = (1.0 + a1 + a2) / 4.0;
    Ok(BiquadCoeffs {
        b0,
        b1: 2.0 * b0,
        b2: b0,
        a1,
        a2,
    })
}

/// 2nd-order Butterworth high-pass with the same pole layout.
pub fn design_highpass(fs: f64, cutoff: f64) -> Result<BiquadCoeffs> {
    let k = prewarp(fs, cutoff)?;
    let k2 = k * k;
    let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
    Ok(BiquadCoeffs {
        b0: norm,
        b1: -2.0 * norm,
        b2: norm,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - SQRT_2 * k + k2) * norm,
    })
}

/// The label filter: low-pass at `cutoff` (10 Hz in the pipeline).
pub fn design_dc_filter(fs: f64, cutoff: f64) -> Result<BiquadCoeffs> {
    design_lowpass(fs, cutoff)
}

/// Direct-form-II-transposed biquad state.
#[derive(Debug, Clone)]
pub struct Biquad {
    c: BiquadCoeffs,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(c: BiquadCoeffs) -> Self {
        Self { c, s1: 0.0, s2: 0.0 }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let c = &self.c;
        let y = c.b0 * x + self.s1;
        self.s1 = c.b1 * x - c.a1 * y + self.s2;
        self.s2 = c.b2 * x - c.a2 * y;
        y
    }

    pub fn run(&mut self, xs: &mut [f64]) {
        for v in xs {
            *v = self.process(*v);
        }
    }
}

/// Causal DC-drift extraction from a zero initial state; output has the
/// input's length.
pub fn dc_extract(x: &[f64], coeffs: &BiquadCoeffs) -> Vec<f64> {
    let mut f = Biquad::new(*coeffs);
    x.iter().map(|&v| f.process(v)).collect()
}
