//! Label extraction, clock alignment and windowing.

mod dataset;
pub mod filter;

pub use dataset::{
    apply_standardization, assert_unit_disjoint, compute_standardization, invert_standardization, Standardization,
    WindowedDataset,
};
pub use filter::{dc_extract, design_dc_filter, design_highpass, design_lowpass, Biquad, BiquadCoeffs};

use crate::error::{validation, Error, Result};
use crate::sim::{SimTrace, FS};

/// Cutoff of the DC-drift label filter, Hz.
pub const DC_CUTOFF: f64 = 10.0;

/// Lag `τ ∈ [−max_lag, max_lag]` maximizing the Pearson correlation between
/// `reference[n]` and `shifted[n + τ]` over their overlap. A positive lag
/// means `shifted` is delayed. Ties go to the smallest `|τ|` (positive
/// first).
pub fn align_xcorr(reference: &[f64], shifted: &[f64], max_lag: usize) -> Result<i64> {
    Ok(xcorr_peak(reference, shifted, max_lag)?.0)
}

/// [`align_xcorr`] together with the correlation at the chosen lag.
pub fn xcorr_peak(reference: &[f64], shifted: &[f64], max_lag: usize) -> Result<(i64, f64)> {
    let (la, lb) = (reference.len(), shifted.len());
    if la <= 2 * max_lag || lb <= 2 * max_lag {
        return Err(validation(format!("sequences must be longer than 2·max_lag = {}", 2 * max_lag)));
    }
    let center = |s: &[f64]| -> Option<Vec<f64>> {
        let first = s[0];
        if s.iter().all(|&v| v == first) {
            return None;
        }
        let m = s.iter().sum::<f64>() / s.len() as f64;
        Some(s.iter().map(|v| v - m).collect())
    };
    let (Some(a), Some(b)) = (center(reference), center(shifted)) else {
        return Err(Error::NoSignal("cross-correlation needs non-constant inputs".into()));
    };
    let prefix = |s: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p1 = vec![0.0; s.len() + 1];
        let mut p2 = vec![0.0; s.len() + 1];
        for (k, v) in s.iter().enumerate() {
            p1[k + 1] = p1[k] + v;
            p2[k + 1] = p2[k] + v * v;
        }
        (p1, p2)
    };
    let (a1, a2) = prefix(&a);
    let (b1, b2) = prefix(&b);

    let corr = |tau: i64| -> f64 {
        let start = (-tau).max(0) as usize;
        let end = (la as i64).min(lb as i64 - tau) as usize;
        let cnt = (end - start) as f64;
        let bs = (start as i64 + tau) as usize;
        let be = (end as i64 + tau) as usize;
        let sab: f64 = a[start..end].iter().zip(&b[bs..be]).map(|(x, y)| x * y).sum();
        let (sa, saa) = (a1[end] - a1[start], a2[end] - a2[start]);
        let (sb, sbb) = (b1[be] - b1[bs], b2[be] - b2[bs]);
        let va = saa - sa * sa / cnt;
        let vb = sbb - sb * sb / cnt;
        if va <= 0.0 || vb <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (sab - sa * sb / cnt) / (va * vb).sqrt()
    };

    let mut best = (0i64, corr(0));
    for k in 1..=max_lag as i64 {
        for tau in [k, -k] {
            let c = corr(tau);
            if c > best.1 {
                best = (tau, c);
            }
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(Error::NoSignal("no lag with non-constant overlap".into()));
    }
    Ok(best)
}

/// Excursion proxy from the electrical channels: the back-EMF
/// `v − r·i` integrated (trapezoid rule) and high-passed twice at 20 Hz.
/// For the right `r` its shape tracks `x` up to scale.
pub fn backemf_proxy(v: &[f64], i: &[f64], r: f64) -> Result<Vec<f64>> {
    let hp = design_highpass(FS, 20.0)?;
    let (mut acc, mut prev) = (0.0, 0.0);
    let mut out: Vec<f64> = v
        .iter()
        .zip(i)
        .map(|(a, b)| {
            let e = a - r * b;
            acc += 0.5 * (e + prev) / FS;
            prev = e;
            acc
        })
        .collect();
    Biquad::new(hp).run(&mut out);
    Biquad::new(hp).run(&mut out);
    Ok(out)
}

const REPAIR_SPAN: usize = 2 * FS as usize;

/// Estimates how far the excursion channel lags the electrical channels and
/// trims the trace back into alignment. Returns the detected lag.
///
/// The coil resistance is unknown, so it is chosen by golden-section search
/// over `[0.5, 20]` Ω to maximize the peak correlation between the back-EMF
/// proxy and `x` (both filtered alike). Only the first two seconds are
/// used. On tonal drives the estimate can be off by a few samples.
pub fn repair_skew(trace: &SimTrace, max_lag: usize) -> Result<(i64, SimTrace)> {
    let span = trace.len().min(REPAIR_SPAN);
    let to64 = |s: &[f32]| s[..span].iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let (v, i, mut x) = (to64(&trace.v), to64(&trace.i), to64(&trace.x));
    let hp = design_highpass(FS, 20.0)?;
    Biquad::new(hp).run(&mut x);
    Biquad::new(hp).run(&mut x);
    let score = |r: f64| -> Result<(i64, f64)> { xcorr_peak(&backemf_proxy(&v, &i, r)?, &x, max_lag) };

    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.5f64, 20.0f64);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (score(c)?.1, score(d)?.1);
    for _ in 0..30 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = score(c)?.1;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = score(d)?.1;
        }
    }
    let lag = score(0.5 * (lo + hi))?.0;
    Ok((lag, crate::sim::inject_clock_skew(trace, -lag)?))
}

/// Causal DC-drift labels for every sample of `trace`.
pub fn trace_labels(trace: &SimTrace, coeffs: &BiquadCoeffs) -> Vec<f64> {
    let x: Vec<f64> = trace.x.iter().map(|&s| s as f64).collect();
    dc_extract(&x, coeffs)
}

/// Number of windows [`window`] produces.
pub fn window_count(len: usize, n: usize, stride: usize) -> usize {
    if n == 0 || stride == 0 || len < n {
        0
    } else {
        (len - n) / stride + 1
    }
}

/// Cuts `trace` into windows starting at `0, stride, 2·stride, …`; each
/// record is `[i; v]` and carries `labels[end]` (stored at `f32` precision).
pub fn window(trace: &SimTrace, labels: &[f64], n: usize, stride: usize) -> Result<WindowedDataset> {
    window_from(trace, labels, n, stride, 0)
}

/// As [`window`] but keeps only windows whose last sample is at or after
/// `settle` (the start grid stays anchored at 0).
pub fn window_from(trace: &SimTrace, labels: &[f64], n: usize, stride: usize, settle: usize) -> Result<WindowedDataset> {
    if n == 0 || stride == 0 {
        return Err(validation("window length and stride must be >= 1"));
    }
    if labels.len() != trace.len() {
        return Err(validation("labels must align with the trace"));
    }
    let len = trace.len();
    if n > len {
        return Err(Error::EmptyDataset(format!("window length {n} exceeds trace length {len}")));
    }
    let mut ds = WindowedDataset::new(n);
    let mut buf = vec![0.0; 2 * n];
    let first = settle.saturating_sub(n - 1).div_ceil(stride);
    for k in first..window_count(len, n, stride) {
        let s = k * stride;
        for j in 0..n {
            buf[j] = trace.i[s + j] as f64;
            buf[n + j] = trace.v[s + j] as f64;
        }
        let end = s + n - 1;
        let label = labels[end] as f32 as f64;
        ds.push(&buf, label, &trace.unit_id, trace.scenario, end as u64)?;
    }
    Ok(ds)
}

/// Labels and windows one trace, dropping the first second of filter
/// settling.
pub fn trace_dataset(trace: &SimTrace, n: usize, stride: usize) -> Result<WindowedDataset> {
    let coeffs = design_dc_filter(FS, DC_CUTOFF)?;
    let labels = trace_labels(trace, &coeffs);
    window_from(trace, &labels, n, stride, FS as usize)
}
