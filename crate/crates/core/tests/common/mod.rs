//! Independent oracles shared by the integration suites: central finite
//! differences and brute-force reference implementations.
#![allow(dead_code)]

use excursion::models::{model_to_bytes, Mode, Model};
use excursion::tensor::{FftNorm, Graph, Tensor, Var};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random tensor whose entries stay at least `gap` away from zero (keeps
/// ReLU inputs off the kink).
pub fn random_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Compares reverse-mode gradients of `f` against central finite
/// differences (h = 1e-5). Every input is treated as a differentiable
/// leaf. Returns the worst per-tensor relative error
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let h = 1e-5;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t.len()))
        .collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::inference();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= h;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic[ti].iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic[ti].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        // Gradients that vanish analytically (e.g. a key bias under softmax)
        // leave only finite-difference noise, so the scale is floored.
        let rel = diff / denom.max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Projects a tensor onto a fixed random direction so the scalar loss
/// exercises the full Jacobian.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let n = g.value(v).len();
    let mut r = rng(seed ^ 0x9e37_79b9);
    let c = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    g.dot_const(v, c).unwrap()
}

/// Triple-loop reference convolution for one sample `[C_in, L]`.
pub fn conv1d_reference(
    x: &[f64],
    c_in: usize,
    l: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let l_out = (l + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * l_out];
    for co in 0..c_out {
        for t in 0..l_out {
            let mut s = bias[co];
            for ci in 0..c_in {
                for kk in 0..k {
                    let idx = (t * stride + kk) as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < l {
                        s += w[(co * c_in + ci) * k + kk] * x[ci * l + idx as usize];
                    }
                }
            }
            out[co * l_out + t] = s;
        }
    }
    out
}

/// Per-head loop reference attention for one sample `[M, D]`; weights are
/// `[out, in]` with separate biases.
pub fn attention_reference(x: &[f64], m: usize, d: usize, heads: usize, w: &[&[f64]; 8]) -> Vec<f64> {
    let proj = |wm: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| (0..d).map(|e| b[e] + (0..d).map(|j| wm[e * d + j] * x[i * d + j]).sum::<f64>()).collect())
            .collect()
    };
    let q = proj(w[0], w[1]);
    let k = proj(w[2], w[3]);
    let v = proj(w[4], w[5]);
    let dh = d / heads;
    let mut concat = vec![vec![0.0; d]; m];
    for h in 0..heads {
        for i in 0..m {
            let scores: Vec<f64> = (0..m)
                .map(|j| (0..dh).map(|e| q[i][h * dh + e] * k[j][h * dh + e]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            for e in 0..dh {
                concat[i][h * dh + e] = (0..m).map(|j| ex[j] / z * v[j][h * dh + e]).sum();
            }
        }
    }
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        for e in 0..d {
            out[i * d + e] = w[7][e] + (0..d).map(|j| w[6][e * d + j] * concat[i][j]).sum::<f64>();
        }
    }
    out
}

/// Complex matrix-vector reference for mode mixing of one `[2, C, M]`
/// spectrum with shared weights `[2, C, C]`.
pub fn mode_mix_reference(spec: &[f64], phi: &[f64], c: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * c * m];
    for k in 0..m {
        for co in 0..c {
            let mut acc = Complex64::new(0.0, 0.0);
            for ci in 0..c {
                let p = Complex64::new(phi[co * c + ci], phi[c * c + co * c + ci]);
                let s = Complex64::new(spec[ci * m + k], spec[c * m + ci * m + k]);
                acc += p * s;
            }
            out[co * m + k] = acc.re;
            out[c * m + co * m + k] = acc.im;
        }
    }
    out
}

/// The full set of per-op gradient checks for one seed, as
/// `(name, worst relative error)`.
pub fn op_gradient_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    // conv1d, stride 1 "same" and stride 2
    for (name, stride) in [("conv1d", 1usize), ("conv1d_stride2", 2)] {
        let x = random_tensor(&mut r, &[2, 2, 8], 1.0);
        let w = random_tensor(&mut r, &[3, 2, 3], 1.0);
        let b = random_tensor(&mut r, &[3], 1.0);
        let e = grad_check(&[x, w, b], |g, v| {
            let y = g.conv1d(v[0], v[1], Some(v[2]), stride, 1).unwrap();
            project(g, y, seed)
        });
        out.push((name, e));
    }

    let x = random_tensor(&mut r, &[3, 4], 1.0);
    let w = random_tensor(&mut r, &[2, 4], 1.0);
    let b = random_tensor(&mut r, &[2], 1.0);
    out.push((
        "linear",
        grad_check(&[x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
            project(g, y, seed)
        }),
    ));

    let x = random_tensor(&mut r, &[3, 2, 5], 2.0);
    let gamma = random_tensor(&mut r, &[2], 1.5);
    let beta = random_tensor(&mut r, &[2], 1.0);
    out.push((
        "batchnorm_train",
        grad_check(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap();
            project(g, y, seed)
        }),
    ));
    out.push((
        "batchnorm_eval",
        grad_check(&[x, gamma, beta], |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.3, 0.7], 1e-5).unwrap();
            project(g, y, seed)
        }),
    ));

    let x = random_tensor_off_zero(&mut r, &[2, 3, 4], 1e-2);
    out.push((
        "relu",
        grad_check(&[x], |g, v| {
            let y = g.relu(v[0]);
            project(g, y, seed)
        }),
    ));

    let x = random_tensor(&mut r, &[2, 3, 8], 1.0);
    out.push((
        "avgpool1d",
        grad_check(&[x], |g, v| {
            let y = g.avgpool1d(v[0], 4).unwrap();
            project(g, y, seed)
        }),
    ));

    let spec = random_tensor(&mut r, &[2, 2, 3, 4], 1.0);
    let phi = random_tensor(&mut r, &[2, 3, 3], 1.0);
    out.push((
        "mode_mix",
        grad_check(&[spec.clone(), phi], |g, v| {
            let y = g.mode_mix(v[0], v[1]).unwrap();
            project(g, y, seed)
        }),
    ));
    let phi_pm = random_tensor(&mut r, &[4, 2, 3, 3], 1.0);
    out.push((
        "mode_mix_per_mode",
        grad_check(&[spec, phi_pm], |g, v| {
            let y = g.mode_mix(v[0], v[1]).unwrap();
            project(g, y, seed)
        }),
    ));

    let (m, d) = (3, 4);
    let mut ins = vec![random_tensor(&mut r, &[2, m, d], 1.0)];
    for i in 0..8 {
        ins.push(if i % 2 == 0 { random_tensor(&mut r, &[d, d], 0.8) } else { random_tensor(&mut r, &[d], 0.5) });
    }
    out.push((
        "multihead_attention",
        grad_check(&ins, |g, v| {
            let w = [v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]];
            let y = g.attention(v[0], w, 2).unwrap();
            project(g, y, seed)
        }),
    ));

    for (name, norm) in [("rfft", FftNorm::Backward), ("rfft_ortho", FftNorm::Ortho)] {
        let x = random_tensor(&mut r, &[2, 2, 16], 1.0);
        out.push((
            name,
            grad_check(&[x], |g, v| {
                let y = g.rfft(v[0], 9, norm).unwrap();
                project(g, y, seed)
            }),
        ));
    }
    for (name, modes) in [("irfft", 9usize), ("irfft_truncated", 5)] {
        let x = random_tensor(&mut r, &[2, 2, 2, modes], 1.0);
        out.push((
            name,
            grad_check(&[x], |g, v| {
                let y = g.irfft(v[0], 16, FftNorm::Ortho).unwrap();
                project(g, y, seed)
            }),
        ));
    }

    let x = random_tensor(&mut r, &[2, 3, 5], 1.0);
    out.push((
        "transpose12",
        grad_check(&[x], |g, v| {
            let y = g.transpose12(v[0]).unwrap();
            project(g, y, seed)
        }),
    ));

    let pred = random_tensor(&mut r, &[4, 1], 0.3);
    let target: Vec<f64> = (0..4).map(|_| r.random_range(-0.3..0.3)).collect();
    out.push((
        "scaled_quartic",
        grad_check(&[pred], |g, v| g.scaled_quartic(v[0], &target, 1000.0).unwrap()),
    ));
    out
}

/// Gradient check of one composed FAOL block (all eleven parameter tensors
/// plus the input).
pub fn faol_gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed.wrapping_add(0x5eed));
    let (c, l, modes, heads) = (3, 16, 6, 2);
    let d = 2 * c;
    let mut ins = vec![random_tensor(&mut r, &[2, c, l], 1.0)];
    for i in 0..8 {
        ins.push(if i % 2 == 0 { random_tensor(&mut r, &[d, d], 0.6) } else { random_tensor(&mut r, &[d], 0.3) });
    }
    ins.push(random_tensor(&mut r, &[2, c, c], 1.0));
    ins.push(random_tensor(&mut r, &[c, c, 1], 1.0));
    ins.push(random_tensor(&mut r, &[c], 0.5));
    grad_check(&ins, |g, v| {
        let p: [Var; 11] = v[1..12].try_into().unwrap();
        let y = excursion::models::faol(g, v[0], &p, modes, heads).unwrap();
        project(g, y, seed)
    })
}

pub fn random_windows(seed: u64, count: usize, n: usize, scale: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..count * 2 * n).map(|_| r.random_range(-scale..scale)).collect()
}

/// Walks an `EXM1` file and returns `(name, element count)` per tensor.
pub fn checkpoint_directory(bytes: &[u8]) -> Vec<(String, usize)> {
    let mut p = 8;
    let rd = |p: &mut usize, n: usize| {
        let s = &bytes[*p..*p + n];
        *p += n;
        s
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let blob = u32_at(rd(&mut p, 4));
    rd(&mut p, blob);
    let count = u32_at(rd(&mut p, 4));
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(rd(&mut p, 2).try_into().unwrap()) as usize;
        let name = String::from_utf8(rd(&mut p, len).to_vec()).unwrap();
        rd(&mut p, 1);
        let rank = rd(&mut p, 1)[0] as usize;
        let mut elems = 1;
        for _ in 0..rank {
            elems *= u32_at(rd(&mut p, 4));
        }
        rd(&mut p, 8);
        out.push((name, elems));
    }
    out
}

pub fn brute_force_params(m: &Model) -> usize {
    checkpoint_directory(&model_to_bytes(m))
        .into_iter()
        .filter(|(n, _)| !n.starts_with("input.") && !n.contains("running_"))
        .map(|(_, e)| e)
        .sum()
}

pub fn measured_flops(m: &Model) -> u64 {
    let mut g = Graph::inference();
    let p = m.register(&mut g);
    let x = g.input(m.input_tensor(&random_windows(1, 1, m.input_len(), 1.0)).unwrap());
    m.forward(&mut g, &p, x, Mode::Eval).unwrap();
    2 * g.macs()
}
