//! Single-sample numeric kernels shared by the autodiff graph, the folded
//! float reference used for quantization, and the integer path.

use crate::error::{shape, Result};

/// Geometry of a 1-D convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub l_in: usize,
    pub l_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, l_in: usize) -> Result<Self> {
        if stride == 0 || k == 0 || c_in == 0 || c_out == 0 {
            return Err(shape("conv1d needs non-zero channels, kernel and stride"));
        }
        if l_in + 2 * pad < k {
            return Err(shape(format!(
                "conv1d kernel {k} longer than padded input {}",
                l_in + 2 * pad
            )));
        }
        let l_out = (l_in + 2 * pad - k) / stride + 1;
        Ok(Self { c_in, c_out, k, stride, pad, l_in, l_out })
    }

    /// Output positions `t` for which tap `kk` reads inside the input.
    #[inline]
    pub fn valid_range(&self, kk: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // t*s + off >= 0
        let t0 = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // t*s + off <= l_in - 1
        let last = self.l_in as isize - 1 - off;
        let t1 = if last < 0 { 0 } else { last / s + 1 };
        let t1 = t1.min(self.l_out as isize);
        let t0 = t0.min(t1);
        (t0 as usize, t1 as usize)
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k
    }

    pub fn macs(&self) -> usize {
        self.c_out * self.c_in * self.k * self.l_out
    }
}

pub fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    for co in 0..g.c_out {
        let o = &mut out[co * g.l_out..(co + 1) * g.l_out];
        o.fill(b.map_or(0.0, |b| b[co]));
        for ci in 0..g.c_in {
            let xr = &x[ci * g.l_in..(ci + 1) * g.l_in];
            let wr = &w[(co * g.c_in + ci) * g.k..(co * g.c_in + ci + 1) * g.k];
            for (kk, &wv) in wr.iter().enumerate() {
                let (t0, t1) = g.valid_range(kk);
                if t0 >= t1 {
                    continue;
                }
                let start = t0 * g.stride + kk - g.pad;
                if g.stride == 1 {
                    for (ov, xv) in o[t0..t1].iter_mut().zip(&xr[start..start + (t1 - t0)]) {
                        *ov += wv * xv;
                    }
                } else {
                    for (ov, xv) in o[t0..t1].iter_mut().zip(xr[start..].iter().step_by(g.stride)) {
                        *ov += wv * xv;
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of one sample.
pub fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    if let Some(gb) = gb {
        for co in 0..g.c_out {
            gb[co] += gout[co * g.l_out..(co + 1) * g.l_out].iter().sum::<f64>();
        }
    }
    for co in 0..g.c_out {
        let go = &gout[co * g.l_out..(co + 1) * g.l_out];
        for ci in 0..g.c_in {
            let widx = (co * g.c_in + ci) * g.k;
            for kk in 0..g.k {
                let (t0, t1) = g.valid_range(kk);
                if t0 >= t1 {
                    continue;
                }
                let start = ci * g.l_in + t0 * g.stride + kk - g.pad;
                if let Some(gw) = gw.as_deref_mut() {
                    let xs = &x[start..];
                    gw[widx + kk] += if g.stride == 1 {
                        dot(&go[t0..t1], &xs[..t1 - t0])
                    } else {
                        go[t0..t1]
                            .iter()
                            .zip(xs.iter().step_by(g.stride))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    };
                }
                if let Some(gx) = gx.as_deref_mut() {
                    let wv = w[widx + kk];
                    let gxs = &mut gx[start..];
                    if g.stride == 1 {
                        for (gxv, gov) in gxs[..t1 - t0].iter_mut().zip(&go[t0..t1]) {
                            *gxv += wv * gov;
                        }
                    } else {
                        for (gxv, gov) in gxs.iter_mut().step_by(g.stride).zip(&go[t0..t1]) {
                            *gxv += wv * gov;
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with four interleaved partial sums (fixed order, so results
/// are reproducible).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[r, :] = W · x[r, :] + b` for `rows` row vectors; `w` is
/// `[f_out, f_in]` row-major.
pub fn linear_rows(x: &[f64], w: &[f64], b: Option<&[f64]>, f_in: usize, f_out: usize, out: &mut [f64]) {
    let rows = x.len() / f_in;
    for r in 0..rows {
        let xr = &x[r * f_in..(r + 1) * f_in];
        for o in 0..f_out {
            out[r * f_out + o] = dot(&w[o * f_in..(o + 1) * f_in], xr) + b.map_or(0.0, |b| b[o]);
        }
    }
}

/// Backward of [`linear_rows`]; accumulates into the provided buffers.
#[allow(clippy::too_many_arguments)]
pub fn linear_rows_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    f_in: usize,
    f_out: usize,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
) {
    let rows = x.len() / f_in;
    for r in 0..rows {
        let xr = &x[r * f_in..(r + 1) * f_in];
        for o in 0..f_out {
            let go = gout[r * f_out + o];
            if go == 0.0 {
                continue;
            }
            if let Some(gb) = gb.as_deref_mut() {
                gb[o] += go;
            }
            if let Some(gw) = gw.as_deref_mut() {
                for (gwv, xv) in gw[o * f_in..(o + 1) * f_in].iter_mut().zip(xr) {
                    *gwv += go * xv;
                }
            }
            if let Some(gx) = gx.as_deref_mut() {
                for (gxv, wv) in gx[r * f_in..(r + 1) * f_in].iter_mut().zip(&w[o * f_in..(o + 1) * f_in]) {
                    *gxv += go * wv;
                }
            }
        }
    }
}

/// Projection weights of one multi-head attention block. Every matrix is
/// `[d, d]` (out × in), every bias `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
}

/// Intermediate values of one attention forward pass.
#[derive(Debug, Clone, Default)]
pub struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax probabilities, `[heads, m, m]`.
    pub p: Vec<f64>,
    /// Concatenated head outputs before the output projection.
    pub o: Vec<f64>,
}

/// Scaled dot-product self-attention over `m` tokens of width `d`.
pub fn attention_forward(x: &[f64], m: usize, d: usize, heads: usize, w: &AttnWeights, out: &mut [f64]) -> AttnCache {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut c = AttnCache {
        q: vec![0.0; m * d],
        k: vec![0.0; m * d],
        v: vec![0.0; m * d],
        p: vec![0.0; heads * m * m],
        o: vec![0.0; m * d],
    };
    linear_rows(x, w.wq, Some(w.bq), d, d, &mut c.q);
    linear_rows(x, w.wk, Some(w.bk), d, d, &mut c.k);
    linear_rows(x, w.wv, Some(w.bv), d, d, &mut c.v);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..m {
            let qi = &c.q[i * d + cols.start..i * d + cols.end];
            let row = &mut c.p[(h * m + i) * m..(h * m + i + 1) * m];
            for j in 0..m {
                row[j] = dot(qi, &c.k[j * d + cols.start..j * d + cols.end]) * scale;
            }
            softmax_inplace(row);
            let oi = &mut c.o[i * d + cols.start..i * d + cols.end];
            for j in 0..m {
                let pj = row[j];
                for (ov, vv) in oi.iter_mut().zip(&c.v[j * d + cols.start..j * d + cols.end]) {
                    *ov += pj * vv;
                }
            }
        }
    }
    linear_rows(&c.o, w.wo, Some(w.bo), d, d, out);
    c
}

/// Gradient buffers for [`attention_backward`], laid out like [`AttnWeights`].
pub struct AttnGrads<'a> {
    pub x: Option<&'a mut [f64]>,
    pub wq: Option<&'a mut [f64]>,
    pub bq: Option<&'a mut [f64]>,
    pub wk: Option<&'a mut [f64]>,
    pub bk: Option<&'a mut [f64]>,
    pub wv: Option<&'a mut [f64]>,
    pub bv: Option<&'a mut [f64]>,
    pub wo: Option<&'a mut [f64]>,
    pub bo: Option<&'a mut [f64]>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    x: &[f64],
    m: usize,
    d: usize,
    heads: usize,
    w: &AttnWeights,
    c: &AttnCache,
    gy: &[f64],
    g: AttnGrads,
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut go = vec![0.0; m * d];
    linear_rows_backward(&c.o, w.wo, gy, d, d, Some(&mut go), g.wo, g.bo);

    let mut gq = vec![0.0; m * d];
    let mut gk = vec![0.0; m * d];
    let mut gv = vec![0.0; m * d];
    let mut gp = vec![0.0; m];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..m {
            let p = &c.p[(h * m + i) * m..(h * m + i + 1) * m];
            let goi = &go[i * d + cols.start..i * d + cols.end];
            for j in 0..m {
                gp[j] = dot(goi, &c.v[j * d + cols.start..j * d + cols.end]);
                let pj = p[j];
                for (gvv, gov) in gv[j * d + cols.start..j * d + cols.end].iter_mut().zip(goi) {
                    *gvv += pj * gov;
                }
            }
            let inner = dot(p, &gp);
            let qi_start = i * d + cols.start;
            for j in 0..m {
                let gs = p[j] * (gp[j] - inner) * scale;
                if gs == 0.0 {
                    continue;
                }
                for e in 0..dh {
                    gq[qi_start + e] += gs * c.k[j * d + cols.start + e];
                    gk[j * d + cols.start + e] += gs * c.q[qi_start + e];
                }
            }
        }
    }
    let mut gx = g.x;
    linear_rows_backward(x, w.wq, &gq, d, d, gx.as_deref_mut(), g.wq, g.bq);
    linear_rows_backward(x, w.wk, &gk, d, d, gx.as_deref_mut(), g.wk, g.bk);
    linear_rows_backward(x, w.wv, &gv, d, d, gx.as_deref_mut(), g.wv, g.bv);
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Complex channel mixing of one spectrum `[2, c, m]` (real plane, then
/// imaginary plane) by `phi`, either shared `[2, c, c]` or per mode
/// `[m, 2, c, c]`.
pub fn mode_mix_forward(spec: &[f64], phi: &[f64], c: usize, m: usize, per_mode: bool, out: &mut [f64]) {
    let (sr, si) = spec.split_at(c * m);
    let (or, oi) = out.split_at_mut(c * m);
    or.fill(0.0);
    oi.fill(0.0);
    for mode in 0..m {
        let base = if per_mode { mode * 2 * c * c } else { 0 };
        let (pr, pi) = phi[base..base + 2 * c * c].split_at(c * c);
        for co in 0..c {
            let mut re = 0.0;
            let mut im = 0.0;
            for ci in 0..c {
                let (a, b) = (pr[co * c + ci], pi[co * c + ci]);
                let (xr, xi) = (sr[ci * m + mode], si[ci * m + mode]);
                re += a * xr - b * xi;
                im += a * xi + b * xr;
            }
            or[co * m + mode] = re;
            oi[co * m + mode] = im;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn mode_mix_backward(
    spec: &[f64],
    phi: &[f64],
    c: usize,
    m: usize,
    per_mode: bool,
    gout: &[f64],
    mut gspec: Option<&mut [f64]>,
    mut gphi: Option<&mut [f64]>,
) {
    let (sr, si) = spec.split_at(c * m);
    let (gr, gi) = gout.split_at(c * m);
    for mode in 0..m {
        let base = if per_mode { mode * 2 * c * c } else { 0 };
        let (pr, pi) = phi[base..base + 2 * c * c].split_at(c * c);
        for co in 0..c {
            let (g_re, g_im) = (gr[co * m + mode], gi[co * m + mode]);
            for ci in 0..c {
                let (a, b) = (pr[co * c + ci], pi[co * c + ci]);
                let (xr, xi) = (sr[ci * m + mode], si[ci * m + mode]);
                if let Some(gs) = gspec.as_deref_mut() {
                    gs[ci * m + mode] += a * g_re + b * g_im;
                    gs[c * m + ci * m + mode] += -b * g_re + a * g_im;
                }
                if let Some(gp) = gphi.as_deref_mut() {
                    gp[base + co * c + ci] += g_re * xr + g_im * xi;
                    gp[base + c * c + co * c + ci] += -g_re * xi + g_im * xr;
                }
            }
        }
    }
}
