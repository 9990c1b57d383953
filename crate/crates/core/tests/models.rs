mod common;

use common::{brute_force_params, conv1d_reference, faol_gradient_check, measured_flops, random_tensor, random_windows, rng};
use excursion::models::{
    build_convnet, build_fftnet, dsp_fit, load_checkpoint, model_from_bytes, model_to_bytes, save_checkpoint,
    ConvNetConfig, FftNetConfig, Model, Net,
};
use excursion::preproc::{Standardization, WindowedDataset};
use excursion::sim::Scenario;
use excursion::tensor::{Graph, Tensor};
use excursion::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fftnet_shape_and_budget() {
    let m = build_fftnet(FftNetConfig::default(), 1).unwrap();
    let y = m.predict(&random_windows(2, 3, 256, 1.0)).unwrap();
    assert_eq!(y.len(), 3);
    assert!(y.iter().all(|v| v.is_finite()));

    let params = m.count_params();
    let flops = m.count_flops(256).unwrap();
    assert!((1000..=3000).contains(&params), "{params}");
    assert!((100_000..=1_000_000).contains(&flops), "{flops}");
    // stem 6·2·5+6, per FAOL 4·(12·12+12) + 2·6·6 + 6·6+6, head 6·32+1
    assert_eq!(params, 66 + 3 * (624 + 72 + 42) + 193);
    assert_eq!(params, brute_force_params(&m));
    // stem, then per FAOL: attention 4·M·D² + 2·M²·D, mode mix 4·C²·M, 1×1 conv C²·L
    let macs = 6 * 2 * 5 * 256 + 3 * (4 * 64 * 144 + 2 * 64 * 64 * 12 + 4 * 36 * 64 + 36 * 256) + 192;
    assert_eq!(flops, 2 * macs as u64);
    assert_eq!(flops, measured_flops(&m));
}

#[test]
fn convnet_shape_and_budget() {
    let m = build_convnet(ConvNetConfig::default(), 1).unwrap();
    let y = m.predict(&random_windows(3, 2, 256, 1.0)).unwrap();
    assert_eq!(y.len(), 2);
    let params = m.count_params();
    let flops = m.count_flops(256).unwrap();
    assert!((15_000..=25_000).contains(&params), "{params}");
    assert!((2_000_000..=5_000_000).contains(&flops), "{flops}");
    assert_eq!(params, 20 * 2 * 5 + 20 + 4 * (2 * (20 * 20 * 5 + 20) + 4 * 20) + 320 + 1);
    assert_eq!(params, brute_force_params(&m));
    let macs = 20 * 2 * 5 * 128 + 8 * 20 * 20 * 5 * 128 + 320;
    assert_eq!(flops, 2 * macs as u64);
    assert_eq!(flops, measured_flops(&m));
    assert!(m.count_flops(512).is_err());
}

#[test]
fn lone_linear_layer_counts() {
    let mut g = Graph::inference();
    let x = g.input(Tensor::zeros(&[1, 4]));
    let w = g.param(Tensor::zeros(&[2, 4]));
    let b = g.param(Tensor::zeros(&[2]));
    g.linear(x, w, Some(b)).unwrap();
    assert_eq!(2 * g.macs(), 16);
    assert_eq!(g.value(w).len() + g.value(b).len(), 10);
}

#[test]
fn config_invariants_are_enforced() {
    let bad = [
        FftNetConfig { heads: 5, ..Default::default() },
        FftNetConfig { modes: 130, ..Default::default() },
        FftNetConfig { blocks: 0, ..Default::default() },
        FftNetConfig { input_len: 200, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(build_fftnet(cfg, 0), Err(Error::Config(_))), "{cfg:?}");
    }
    assert!(build_fftnet(FftNetConfig { modes: 129, ..Default::default() }, 0).is_ok());
    assert!(matches!(build_convnet(ConvNetConfig { channels: 0, ..Default::default() }, 0), Err(Error::Config(_))));
}

#[test]
fn zero_input_gives_zero_output() {
    let zeros = vec![0.0; 2 * 256];
    for m in [
        build_fftnet(FftNetConfig::default(), 3).unwrap(),
        build_convnet(ConvNetConfig::default(), 3).unwrap(),
    ] {
        assert_eq!(m.predict_window(&zeros).unwrap(), 0.0, "{}", m.kind());
    }
}

/// Stem (with optional ReLU), average pool and linear head by hand.
fn stem_pool_head(x: &[f64], stem: &excursion::models::Conv1d, relu: bool, pool: usize, head: &[f64], bias: f64) -> f64 {
    let c = stem.c_out();
    let h = conv1d_reference(x, 2, 256, stem.weight.data(), c, stem.kernel(), stem.bias.data(), stem.stride, stem.pad);
    let l = h.len() / c;
    let mut y = bias;
    for (j, chunk) in h.chunks(pool).enumerate() {
        let avg = chunk.iter().map(|&v| if relu { v.max(0.0) } else { v }).sum::<f64>() / pool as f64;
        y += head[j] * avg;
    }
    assert_eq!(head.len(), c * l / pool);
    y
}

#[test]
fn convnet_with_silent_branches_reduces_to_stem_pool_head() {
    let mut m = build_convnet(ConvNetConfig::default(), 5).unwrap();
    let Net::ConvNet(net) = &mut m.net else { unreachable!() };
    for blk in &mut net.blocks {
        for conv in [&mut blk.conv1, &mut blk.conv2] {
            conv.weight.data_mut().fill(0.0);
            conv.bias.data_mut().fill(0.0);
        }
    }
    let Net::ConvNet(net) = &m.net else { unreachable!() };
    let x = random_windows(6, 1, 256, 1.0);
    let want = stem_pool_head(&x, &net.stem, true, 8, net.head.weight.data(), net.head.bias.data()[0]);
    let got = m.predict_window(&x).unwrap();
    assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn fftnet_spectral_branch_is_identity_without_truncation() {
    let cfg = FftNetConfig { modes: 129, ..Default::default() };
    let mut m = build_fftnet(cfg, 7).unwrap();
    let Net::FftNet(net) = &mut m.net else { unreachable!() };
    let c = cfg.channels;
    for blk in &mut net.blocks {
        let phi = blk.phi.data_mut();
        phi.fill(0.0);
        for j in 0..c {
            phi[j * c + j] = 1.0;
        }
        // Attention contributes through a residual, so a zero output
        // projection leaves the tokens untouched.
        blk.attn[6].data_mut().fill(0.0);
        blk.attn[7].data_mut().fill(0.0);
        blk.psi.weight.data_mut().fill(0.0);
        blk.psi.bias.data_mut().fill(0.0);
    }
    let Net::FftNet(net) = &m.net else { unreachable!() };
    let x = random_windows(8, 1, 256, 1.0);
    let want = stem_pool_head(&x, &net.stem, false, 8, net.head.weight.data(), net.head.bias.data()[0]);
    let got = m.predict_window(&x).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn faol_block_gradients_match_finite_differences() {
    for seed in 0..4 {
        let e = faol_gradient_check(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

fn with_stats(mut m: Model) -> Model {
    m.standardization = Standardization {
        mean: [0.1, -0.3],
        std: [0.7, 2.5],
    };
    if let Net::ConvNet(net) = &mut m.net {
        let mut r = rng(11);
        for bn in net.batch_norms_mut() {
            bn.running_mean.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
            bn.running_std.iter_mut().for_each(|v| *v = r.random_range(0.5..2.0));
            bn.gamma = random_tensor(&mut r, &[20], 1.0);
        }
    }
    m
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let x = random_windows(9, 5, 256, 3.0);
    let ds = {
        let mut ds = WindowedDataset::new(256);
        for (k, w) in x.chunks(512).enumerate() {
            ds.push(w, k as f64 * 0.01, "u", Scenario::Normal, k as u64).unwrap();
        }
        ds
    };
    let models = [
        with_stats(build_fftnet(FftNetConfig::default(), 1).unwrap()),
        with_stats(build_fftnet(FftNetConfig { per_mode: true, modes: 16, ..Default::default() }, 1).unwrap()),
        with_stats(build_convnet(ConvNetConfig::default(), 2).unwrap()),
        dsp_fit(&ds).unwrap(),
    ];
    for m in models {
        let path = dir.path().join(format!("{}.exm", m.kind()));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let (a, b) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(model_to_bytes(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let m = build_fftnet(FftNetConfig::default(), 1).unwrap();
    let bytes = model_to_bytes(&m);
    assert!(bytes.len() <= 64 * 1024, "{} bytes", bytes.len());
    assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 100]), Err(Error::Corrupt(_))));
    assert!(matches!(model_from_bytes(&bytes[..10]), Err(Error::Corrupt(_))));
    let mut flip = bytes.clone();
    flip[500] ^= 1;
    assert!(matches!(model_from_bytes(&flip), Err(Error::Corrupt(_))));
    let mut ver = bytes.clone();
    ver[3] = b'2';
    assert!(matches!(model_from_bytes(&ver), Err(Error::Version { found: 2, .. })));
    assert!(matches!(load_checkpoint(std::path::Path::new("/nonexistent/x.exm")), Err(Error::Io(_))));
}

fn linear_dataset(seed: u64, count: usize, coef: &dyn Fn(usize) -> f64, bias: f64) -> (WindowedDataset, Vec<f64>) {
    let mut r = rng(seed);
    let mut ds = WindowedDataset::new(256);
    let mut feats_all = Vec::new();
    for k in 0..count {
        let w: Vec<f64> = (0..512).map(|_| r.random_range(-10.0..10.0)).collect();
        let feats: Vec<f64> = w.chunks(8).map(|c| c.iter().sum::<f64>() / 8.0).collect();
        let y = bias + feats.iter().enumerate().map(|(j, f)| coef(j) * f).sum::<f64>();
        ds.push(&w, y, "u", Scenario::Normal, k as u64).unwrap();
        feats_all.extend(feats);
    }
    (ds, feats_all)
}

#[test]
fn dsp_baseline_examples() {
    let (mut ds, _) = linear_dataset(1, 400, &|_| 0.0, 0.0);
    let m = dsp_fit(&ds).unwrap();
    assert_eq!(m.count_params(), 65);
    assert!(m.params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    assert!(m.predict(ds.inputs()).unwrap().iter().all(|&p| p == 0.0));

    let coef = |j: usize| ((j as f64) * 0.37).sin() * 0.05;
    (ds, _) = linear_dataset(2, 400, &coef, 0.02);
    let m = dsp_fit(&ds).unwrap();
    let Net::Dsp(d) = &m.net else { unreachable!() };
    for (j, w) in d.readout.weight.data().iter().enumerate() {
        assert!((w - coef(j)).abs() < 1e-6, "tap {j}: {w} vs {}", coef(j));
    }
    assert!((d.readout.bias.data()[0] - 0.02).abs() < 1e-6);
    let pred = m.predict(ds.inputs()).unwrap();
    let worst = pred.iter().zip(ds.labels()).map(|(p, y)| (p - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "residual {worst}");
    for (k, p) in pred.iter().enumerate().take(10) {
        assert!((d.predict_window(ds.input(k)) - p).abs() < 1e-12);
    }
    assert!(matches!(dsp_fit(&WindowedDataset::new(256)), Err(Error::EmptyDataset(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outputs_stay_finite_for_large_inputs(seed in any::<u64>(), scale in 1.0f64..1e6) {
        let x = random_windows(seed, 2, 256, scale);
        for m in [
            build_fftnet(FftNetConfig::default(), seed % 7).unwrap(),
            build_convnet(ConvNetConfig::default(), seed % 7).unwrap(),
        ] {
            let y = m.predict(&x).unwrap();
            prop_assert_eq!(y.len(), 2);
            prop_assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
