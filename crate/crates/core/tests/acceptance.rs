//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 4 trains both networks on a 14-unit corpus and dominates the
//! runtime (about 25 minutes on one core); 6 and 7 reuse its ConvNet.

mod common;

use common::{brute_force_params, faol_gradient_check, measured_flops, op_gradient_checks, rng};
use excursion::adapt::{BnAdaptConfig, ALPHA_SWEEP, BnAdapter, LayerSelection};
use excursion::models::{
    build_convnet, build_fftnet, dsp_fit, load_checkpoint, save_checkpoint, ConvNetConfig, FftNetConfig, Model,
};
use excursion::preproc::{align_xcorr, design_dc_filter, trace_dataset, WindowedDataset};
use excursion::quant::{calibrate, fold_bn, quantize_model, CalibrationMode, QuantizedModel};
use excursion::sim::corpus::CorpusSpec;
use excursion::sim::{
    add_noise, read_trace, simulate_trace, write_trace, DriveSpec, Scenario, SimTrace, SpeakerParams, FS,
};
use excursion::tensor::{fft_r2c, ifft_c2r, Tensor};
use excursion::train::{evaluate, metrics_from_predictions, train, Metrics, TrainConfig};
use excursion::Error;
use num_complex::Complex64;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

const WINDOW: usize = 256;
/// Corpus window stride. Denser windows do not fit in memory at 60 s
/// per trace.
const STRIDE: usize = 1024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(id: usize, title: &str, v: &Verdict) {
    println!("criterion {id} [{}] {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    let _ = std::io::stdout().flush();
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(1);
    let (mut round_trip, mut parseval): (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        for p in 1..=10 {
            let n = 1usize << p;
            let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let t = Tensor::new(vec![1, n], x.clone()).unwrap();
            let spec = fft_r2c(&t).unwrap();
            let back = ifft_c2r(&spec, n).unwrap();
            round_trip = round_trip.max(x.iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            // Independent O(n²) DFT for the energy side.
            let mut folded = 0.0;
            for k in 0..=n / 2 {
                let bin: Complex64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (j * k) as f64 / n as f64))
                    .sum();
                let w = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                folded += w * bin.norm_sqr();
                assert!((bin - spec.get(0, k)).norm() < 1e-9 * n as f64, "seed {seed}: bin {k} of {n}");
            }
            let energy: f64 = x.iter().map(|v| v * v).sum();
            parseval = parseval.max((energy - folded / n as f64).abs());
        }
    }
    let mut worst_op: (f64, String) = (0.0, String::new());
    for seed in 0..20 {
        for (name, err) in op_gradient_checks(seed) {
            if err > worst_op.0 {
                worst_op = (err, name.to_string());
            }
        }
    }
    let worst_faol = (0..20).map(faol_gradient_check).fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        round_trip < 1e-9 && parseval < 1e-9 && worst_op.0 < 1e-4 && worst_faol < 1e-4 && secs < 60.0,
        format!(
            "round-trip {round_trip:.1e}, Parseval {parseval:.1e}, worst op grad error {:.1e} ({}), FAOL {worst_faol:.1e}, {secs:.1} s",
            worst_op.0, worst_op.1
        ),
    )
}

/// Closed-form |X/V| (mm per volt) of the linearized speaker.
fn linear_gain(p: &SpeakerParams, f: f64) -> f64 {
    let w = 2.0 * PI * f;
    let m = p.mass * 1e-3;
    let c = p.damping + p.phi0 * p.phi0 / p.r_eb;
    let den = Complex64::new(p.k0 * 1e3 - m * w * w, w * c);
    1e3 * (p.phi0 / p.r_eb) / den.norm()
}

fn tone_amplitude(x: &[f32], f: f64, secs: f64) -> f64 {
    let n = (secs * FS) as usize;
    let start = x.len() - n;
    let (mut s, mut c) = (0.0, 0.0);
    for (k, &v) in x[start..].iter().enumerate() {
        let ph = 2.0 * PI * f * (start + k) as f64 / FS;
        s += v as f64 * ph.sin();
        c += v as f64 * ph.cos();
    }
    2.0 * (s * s + c * c).sqrt() / n as f64
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let p = SpeakerParams::default().linearized();
    let mut worst_amp: f64 = 0.0;
    for f in [20.0, 50.0, 200.0] {
        let t = simulate_trace(&p, &DriveSpec::tone(f, 1.0, 1.5), Scenario::Normal).unwrap();
        worst_amp = worst_amp.max((tone_amplitude(&t.x, f, 0.5) / linear_gain(&p, f) - 1.0).abs());
    }
    let v0 = 2.0;
    let t = simulate_trace(&p, &DriveSpec::constant(v0, 0.5), Scenario::Normal).unwrap();
    let x_static = p.phi0 * v0 / (p.r_eb * p.k0);
    let dc_err = (*t.x.last().unwrap() as f64 / x_static - 1.0).abs();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst_amp < 0.01 && dc_err < 0.005 && secs < 60.0,
        format!("worst relative tone amplitude error {worst_amp:.1e}, DC step error {dc_err:.1e}, {secs:.1} s"),
    )
}

fn criterion_3() -> Verdict {
    let c = design_dc_filter(FS, 10.0).unwrap();
    let butterworth = |f: f64| 1.0 / (1.0 + (f / 10.0f64).powi(4)).sqrt();
    let gain_err = [0.0, 10.0, 1000.0].iter().map(|&f| (c.magnitude(f, FS) - butterworth(f)).abs()).fold(0.0, f64::max);

    // Excursion of a simulated speech-like drive: the channel the lag is
    // measured on.
    let spec = CorpusSpec { duration: 1.2, seed: 3, ..Default::default() };
    let pop = spec.population().unwrap();
    let trace = spec.simulate(0, &pop[0], Scenario::Normal).unwrap();
    let x: Vec<f64> = trace.x.iter().map(|&v| v as f64).collect();
    let (len, margin) = (48000, 1000);
    let pair = |x: &[f64], k: i64| (x[margin..margin + len].to_vec(), x[(margin as i64 - k) as usize..][..len].to_vec());
    let mut exact = 0;
    let lags: Vec<i64> = (-1000..=1000).step_by(40).chain([-999, -1, 1, 999, 1000]).collect();
    for &k in &lags {
        let (a, b) = pair(&x, k);
        exact += usize::from(align_xcorr(&a, &b, 1000).unwrap() == k);
    }

    let mut noisy_hits = 0;
    for seed in 0..100u64 {
        let k = rng(seed).random_range(-1000i64..=1000);
        let noisy = add_noise(&trace, 20.0, seed, false).unwrap();
        let xn: Vec<f64> = noisy.x.iter().map(|&v| v as f64).collect();
        let a = x[margin..margin + len].to_vec();
        let b = xn[(margin as i64 - k) as usize..][..len].to_vec();
        noisy_hits += usize::from(align_xcorr(&a, &b, 1000).unwrap() == k);
    }
    verdict(
        gain_err < 1e-4 && exact == lags.len() && noisy_hits >= 99,
        format!(
            "filter gain error {gain_err:.1e}, noise-free lags {exact}/{}, 20 dB trials {noisy_hits}/100",
            lags.len()
        ),
    )
}

struct Corpus {
    train: WindowedDataset,
    val: WindowedDataset,
    test: WindowedDataset,
}

fn corpus(spec: &CorpusSpec, split: [usize; 3]) -> Corpus {
    let pop = spec.population().unwrap();
    let mut sets = [WindowedDataset::new(WINDOW), WindowedDataset::new(WINDOW), WindowedDataset::new(WINDOW)];
    for (u, p) in pop.iter().enumerate() {
        let k = if u < split[0] { 0 } else if u < split[0] + split[1] { 1 } else { 2 };
        for &s in &spec.scenarios {
            let t = spec.simulate(u, p, s).unwrap();
            sets[k].extend(&trace_dataset(&t, WINDOW, STRIDE).unwrap()).unwrap();
        }
    }
    let [train, val, test] = sets;
    Corpus { train, val, test }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batches_per_epoch: Some(200),
        lr_final: Some(1e-5),
        seed: 7,
        ..Default::default()
    }
}

fn fmt(m: &Metrics) -> String {
    format!("mean {:.4} mm, max {:.4} mm, {:.2}% < 0.1 mm", m.mean_l1, m.max_l1, m.pct_under_0p1mm)
}

fn criterion_4(data: &Corpus, t0: Instant) -> (Verdict, Model) {
    // Validation runs every epoch, so it uses every 8th window.
    let idx: Vec<usize> = (0..data.val.len()).step_by(8).collect();
    let val = data.val.select(&idx);

    let dsp = evaluate(&dsp_fit(&data.train).unwrap(), &data.test).unwrap();
    let fft0 = build_fftnet(FftNetConfig::default(), 11).unwrap();
    let (fft, _) = train(&fft0, &data.train, &val, &train_config(28)).unwrap();
    let fm = evaluate(&fft, &data.test).unwrap();
    let conv0 = build_convnet(ConvNetConfig::default(), 12).unwrap();
    let (conv, _) = train(&conv0, &data.train, &val, &train_config(18)).unwrap();
    let cm = evaluate(&conv, &data.test).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let accurate = |m: &Metrics| m.pct_under_0p1mm >= 99.0 && m.mean_l1 <= 0.02;
    let ordered = fm.mean_l1 <= 1.1 * cm.mean_l1;
    let beats_dsp = fm.mean_l1 <= 0.75 * dsp.mean_l1 && cm.mean_l1 <= 0.75 * dsp.mean_l1;
    let pass = accurate(&fm) && accurate(&cm) && ordered && beats_dsp && secs <= 1800.0;
    let detail = format!(
        "FFTNet {}; ConvNet {}; DSP {}; FFTNet/ConvNet {:.3}, FFTNet/DSP {:.3}, ConvNet/DSP {:.3}; {secs:.0} s",
        fmt(&fm),
        fmt(&cm),
        fmt(&dsp),
        fm.mean_l1 / cm.mean_l1,
        fm.mean_l1 / dsp.mean_l1,
        cm.mean_l1 / dsp.mean_l1
    );
    (verdict(pass, detail), conv)
}

fn criterion_5() -> Verdict {
    let fft = build_fftnet(FftNetConfig::default(), 0).unwrap();
    let conv = build_convnet(ConvNetConfig::default(), 0).unwrap();
    let (fp, ff) = (fft.count_params(), fft.count_flops(WINDOW).unwrap());
    let (cp, cf) = (conv.count_params(), conv.count_flops(WINDOW).unwrap());
    let exact = fp == brute_force_params(&fft)
        && cp == brute_force_params(&conv)
        && ff == measured_flops(&fft)
        && cf == measured_flops(&conv);
    let pass = (1000..=3000).contains(&fp)
        && (100_000..=1_000_000).contains(&ff)
        && (15_000..=25_000).contains(&cp)
        && (2_000_000..=5_000_000).contains(&cf)
        && exact;
    verdict(
        pass,
        format!("FFTNet {fp} params / {ff} FLOPs, ConvNet {cp} params / {cf} FLOPs, counters match enumeration: {exact}"),
    )
}

/// Population B: transduction and resistance both 15% above population A.
fn shifted_spec(seed: u64, duration: f64) -> CorpusSpec {
    let mut base = SpeakerParams::default();
    base.phi0 *= 1.15;
    base.r_eb *= 1.15;
    CorpusSpec { base, units: 1, duration, seed, ..Default::default() }
}

fn criterion_6(model: &Model) -> Verdict {
    let cfg = BnAdaptConfig { window: 256, alpha: 0.1, selection: LayerSelection::FinalBnOnly, ..Default::default() };
    // Scored from the 11th window boundary on.
    let warmup = 10 * cfg.window;
    let mut gains = Vec::new();
    let mut bit_identical = true;
    let mut sweep = vec![0.0; ALPHA_SWEEP.len()];
    for seed in 0..20u64 {
        let spec = shifted_spec(1000 + seed, 36.0);
        let pop = spec.population().unwrap();
        let scenario = Scenario::ALL[seed as usize % 3];
        let trace = spec.simulate(0, &pop[0], scenario).unwrap();
        let ds = trace_dataset(&trace, WINDOW, 256).unwrap();
        let frozen = model.predict_dataset(&ds).unwrap();
        let mut adapter = BnAdapter::new(model, cfg).unwrap();
        let adapted = adapter.run(ds.inputs()).unwrap();
        let scored: Vec<usize> = (warmup..ds.len()).collect();
        let sub = ds.select(&scored);
        let f = metrics_from_predictions(&frozen[warmup..], &sub).unwrap();
        let a = metrics_from_predictions(&adapted[warmup..], &sub).unwrap();
        gains.push((f.mean_l1 - a.mean_l1) / f.mean_l1);

        if seed < 3 {
            for (acc, &alpha) in sweep.iter_mut().zip(&ALPHA_SWEEP) {
                let mut s = BnAdapter::new(model, BnAdaptConfig { alpha, ..cfg }).unwrap();
                let out = s.run(ds.inputs()).unwrap();
                let m = metrics_from_predictions(&out[warmup..], &sub).unwrap();
                *acc += (f.mean_l1 - m.mean_l1) / f.mean_l1 / 3.0;
            }
            let mut unity = BnAdapter::new(model, BnAdaptConfig { alpha: 1.0, ..cfg }).unwrap();
            bit_identical &= unity.run(ds.inputs()).unwrap() == frozen;
        }
    }
    let n = gains.len() as f64;
    let mean_gain = gains.iter().sum::<f64>() / n;
    let sd = (gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t_stat = mean_gain / (sd / n.sqrt());
    let p_value = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t_stat);

    // Step into population B: one block repeated, so every buffer holds the
    // same statistics and the distance to them must shrink by alpha.
    let spec = shifted_spec(77, 4.0);
    let pop = spec.population().unwrap();
    let trace = spec.simulate(0, &pop[0], Scenario::Normal).unwrap();
    let ds = trace_dataset(&trace, WINDOW, 256).unwrap();
    let block = &ds.inputs()[..cfg.window * 2 * WINDOW];
    let mut worst_ratio: f64 = 0.0;
    for alpha in [0.1, 0.5] {
        let mut target = BnAdapter::new(model, BnAdaptConfig { alpha: 0.0, ..cfg }).unwrap();
        target.run(block).unwrap();
        let (tm, ts) = target.stats()[0].clone();
        let mut a = BnAdapter::new(model, BnAdaptConfig { alpha, ..cfg }).unwrap();
        let mut prev = a.stats()[0].clone();
        for _ in 0..8 {
            a.run(block).unwrap();
            let now = a.stats()[0].clone();
            for ch in 0..tm.len() {
                for (n, p, t) in [(now.0[ch], prev.0[ch], tm[ch]), (now.1[ch], prev.1[ch], ts[ch])] {
                    if (p - t).abs() > 1e-9 {
                        worst_ratio = worst_ratio.max(((n - t) / (p - t) / alpha - 1.0).abs());
                    }
                }
            }
            prev = now;
        }
    }
    let pass = mean_gain >= 0.15 && bit_identical && worst_ratio <= 0.05;
    let sweep: Vec<String> = ALPHA_SWEEP.iter().zip(&sweep).map(|(a, g)| format!("{a}:{:.1}%", 100.0 * g)).collect();
    verdict(
        pass,
        format!(
            "mean-L1 gain {:.1}% over 20 seeds (sd {:.1}%, one-sided p {p_value:.2e}), alpha=1 bit-identical: {bit_identical}, worst IIR ratio deviation {:.2}%, sweep on 3 seeds [{}]",
            100.0 * mean_gain,
            100.0 * sd,
            100.0 * worst_ratio,
            sweep.join(" ")
        ),
    )
}

fn criterion_7(model: &Model, data: &Corpus) -> Verdict {
    let unfolded = evaluate(model, &data.test).unwrap();
    let folded_model = fold_bn(model).unwrap();
    let folded = evaluate(&folded_model, &data.test).unwrap();
    let fold_gap = (folded.mean_l1 - unfolded.mean_l1).abs();

    let calib_idx: Vec<usize> = (0..data.train.len()).step_by(16).collect();
    let ranges = calibrate(&folded_model, &data.train.select(&calib_idx), CalibrationMode::MinMax).unwrap();
    let q = quantize_model(&folded_model, &ranges).unwrap();
    let p1 = q.predict_dataset(&data.test).unwrap();
    let int8 = metrics_from_predictions(&p1, &data.test).unwrap();
    let reloaded = QuantizedModel::from_bytes(&q.to_bytes()).unwrap();
    let p2 = reloaded.predict_dataset(&data.test).unwrap();
    let bytes = |p: &[f64]| p.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
    let identical = bytes(&p1) == bytes(&p2) && reloaded.to_bytes() == q.to_bytes();

    let (mean_ratio, max_ratio) = (int8.mean_l1 / unfolded.mean_l1, int8.max_l1 / unfolded.max_l1);
    verdict(
        fold_gap <= 1e-4 && mean_ratio <= 2.0 && max_ratio <= 1.5 && identical,
        format!(
            "fold gap {fold_gap:.1e} mm; FP32 {}; INT8 {}; mean ratio {mean_ratio:.3}, max ratio {max_ratio:.3}; repeat runs byte-identical: {identical}",
            fmt(&unfolded),
            fmt(&int8)
        ),
    )
}

fn cli(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_excursion")).args(args).output().unwrap();
    out.status.code().unwrap_or(-1)
}

/// Runs every command into `root`; returns the failing command, if any.
fn cli_pipeline(root: &Path) -> Option<String> {
    let p = |n: &str| root.join(n).to_string_lossy().into_owned();
    std::fs::write(root.join("tiny.cfg"), "model.channels = 4\nmodel.blocks = 1\nepochs = 2\nbatches_per_epoch = 3\nbatch_size = 16\n")
        .unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate", "--units", "3", "--duration", "2", "--seed", "9", "--out", &p("traces")],
        vec!["preprocess", "--in", &p("traces"), "--stride", "256", "--split", "1,1,1", "--out", &p("data")],
        vec!["train", "--model", "convnet", "--data", &p("data"), "--config", &p("tiny.cfg"), "--seed", "2", "--out", &p("c.exm")],
        vec!["train", "--model", "fftnet", "--data", &p("data"), "--config", &p("tiny.cfg"), "--out", &p("f.exm")],
        vec!["train", "--model", "dsp", "--data", &p("data"), "--out", &p("d.exm")],
        vec!["eval", "--ckpt", &p("c.exm"), "--data", &p("data"), "--report", &p("e.csv"), "--predictions", &p("pred.csv")],
        vec!["adapt", "--ckpt", &p("c.exm"), "--stream", &p("data/test.exw"), "--window", "32", "--report", &p("a.csv")],
        vec![
            "quantize", "--ckpt", &p("c.exm"), "--calib", &p("data/train.exw"), "--out", &p("c.exq"), "--test",
            &p("data/test.exw"), "--report", &p("q.csv"),
        ],
        vec!["report", "--inputs", &p("pred.csv"), &p("a.csv"), &p("q.csv"), "--out", &p("report")],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if cli(&args) != 0 {
            return Some(s[0].clone());
        }
    }
    None
}

/// Every data artifact under `dir` (manifests carry wall time and are
/// skipped).
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            if p.is_dir() {
                stack.push(p);
            } else if !name.ends_with("manifest") && !name.ends_with("manifest.txt") {
                out.push((name, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Some(step) = cli_pipeline(a.path()).or_else(|| cli_pipeline(b.path())) {
        return verdict(false, format!("`{step}` failed"));
    }
    let (sa, sb) = (artifacts(a.path()), artifacts(b.path()));
    let deterministic = sa == sb && sa.len() >= 20;

    // Round trips.
    let dir = a.path();
    let ds = WindowedDataset::load(&dir.join("data/test.exw")).unwrap();
    ds.save(&dir.join("copy.exw")).unwrap();
    let mut round_trips = WindowedDataset::load(&dir.join("copy.exw")).unwrap() == ds;
    for name in ["c.exm", "f.exm", "d.exm"] {
        let m = load_checkpoint(&dir.join(name)).unwrap();
        save_checkpoint(&m, &dir.join("copy.exm")).unwrap();
        let back = load_checkpoint(&dir.join("copy.exm")).unwrap();
        round_trips &= back.predict_dataset(&ds).unwrap() == m.predict_dataset(&ds).unwrap();
        round_trips &= std::fs::read(dir.join("copy.exm")).unwrap() == std::fs::read(dir.join(name)).unwrap();
    }
    let trace_path = std::fs::read_dir(dir.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "exc"))
        .unwrap();
    let trace: SimTrace = read_trace(&trace_path).unwrap();
    write_trace(&dir.join("copy.exc"), &trace).unwrap();
    round_trips &= read_trace(&dir.join("copy.exc")).unwrap() == trace;
    let q = QuantizedModel::load(&dir.join("c.exq")).unwrap();
    round_trips &= QuantizedModel::from_bytes(&q.to_bytes()).unwrap().predict_dataset(&ds).unwrap()
        == q.predict_dataset(&ds).unwrap();

    // Damaged files: flipped byte, truncation, next format version.
    let mut classes = true;
    let files = [("data/test.exw", 0usize), ("c.exm", 1), ("c.exq", 2), (&trace_path.to_string_lossy().into_owned(), 3)];
    for (name, kind) in files {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let mut flipped = bytes.clone();
        // Traces carry no checksum, so their damage goes to the scenario code.
        let at = if kind == 3 { 32 } else { bytes.len() / 2 };
        flipped[at] ^= 0x70;
        let mut versioned = bytes.clone();
        versioned[3] += 1;
        for (damaged, want_version) in [(flipped, false), (bytes[..bytes.len() - 7].to_vec(), false), (versioned, true)] {
            let path = dir.join("damaged.bin");
            std::fs::write(&path, &damaged).unwrap();
            let err = match kind {
                0 => WindowedDataset::load(&path).err(),
                1 => load_checkpoint(&path).err(),
                2 => QuantizedModel::load(&path).err(),
                _ => read_trace(&path).err(),
            };
            classes &= match (err, want_version) {
                (Some(Error::Version { .. }), true) | (Some(Error::Corrupt(_)), false) => true,
                _ => false,
            };
        }
    }
    let missing = matches!(load_checkpoint(&dir.join("absent.exm")), Err(Error::Io(_)));
    let exit_corrupt = {
        let bytes = std::fs::read(dir.join("c.exm")).unwrap();
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 1;
        std::fs::write(dir.join("bad.exm"), bad).unwrap();
        let (ck, data) = (dir.join("bad.exm"), dir.join("data"));
        cli(&["eval", "--ckpt", &ck.to_string_lossy(), "--data", &data.to_string_lossy(), "--report", "/dev/null"]) == 5
    };
    verdict(
        deterministic && round_trips && classes && missing && exit_corrupt,
        format!(
            "{} artifacts byte-identical across reruns: {deterministic}; round trips bit-exact: {round_trips}; damaged files classified: {classes}; missing file is an io error: {missing}; corrupt checkpoint exits 5: {exit_corrupt}",
            sa.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and similar harness probes get an empty listing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let titles = [
        "numerical core",
        "simulator fidelity",
        "preprocessing",
        "end-to-end learning",
        "complexity accounting",
        "BN re-estimation",
        "quantization",
        "determinism and formats",
    ];
    // ACCEPTANCE_ONLY=1,2,3 runs a subset; 6 and 7 need the model from 4.
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id) || (id == 4 && (o.contains(&6) || o.contains(&7))));
    let mut failed = 0;
    let mut record = |id: usize, v: Verdict| {
        report(id, titles[id - 1], &v);
        failed += usize::from(!v.pass);
    };
    if wanted(1) {
        record(1, criterion_1());
    }
    if wanted(2) {
        record(2, criterion_2());
    }
    if wanted(3) {
        record(3, criterion_3());
    }
    if wanted(4) {
        let t0 = Instant::now();
        let spec = CorpusSpec { duration: 60.0, seed: 1, ..Default::default() };
        let data = corpus(&spec, [8, 4, 2]);
        let (v4, conv) = criterion_4(&data, t0);
        record(4, v4);
        if wanted(5) {
            record(5, criterion_5());
        }
        if wanted(6) {
            record(6, criterion_6(&conv));
        }
        if wanted(7) {
            record(7, criterion_7(&conv, &data));
        }
    } else if wanted(5) {
        record(5, criterion_5());
    }
    if wanted(8) {
        record(8, criterion_8());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all selected criteria passed");
}
