use excursion::preproc::{
    align_xcorr, apply_standardization, assert_unit_disjoint, compute_standardization, dc_extract, design_dc_filter,
    invert_standardization, window, window_count, WindowedDataset,
};
use excursion::sim::{DriveSpec, Scenario, SimTrace};
use excursion::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

const FS: f64 = 48000.0;

/// Analog 2nd-order Butterworth magnitude.
fn butterworth(f: f64, fc: f64) -> f64 {
    1.0 / (1.0 + (f / fc).powi(4)).sqrt()
}

fn noise(len: usize, seed: u64) -> Vec<f64> {
    DriveSpec::band_noise(1.0, len as f64 / FS, seed).synthesize(FS, len).unwrap()
}

/// `(a, b)` with `b[n] = a[n − k]`.
fn delayed_pair(len: usize, k: i64, margin: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let s = noise(len + 2 * margin, seed);
    let a = s[margin..margin + len].to_vec();
    let st = (margin as i64 - k) as usize;
    (a, s[st..st + len].to_vec())
}

fn ramp_trace(len: usize) -> SimTrace {
    SimTrace {
        fs: 48000,
        unit_id: "unit00".into(),
        scenario: Scenario::Heating,
        v: (0..len).map(|k| 0.5 + k as f32).collect(),
        i: (0..len).map(|k| -(k as f32) * 0.25).collect(),
        x: vec![0.0; len],
    }
}

#[test]
fn dc_filter_gains() {
    let c = design_dc_filter(FS, 10.0).unwrap();
    assert!((c.magnitude(0.0, FS) - 1.0).abs() < 1e-12);
    assert!((c.magnitude(10.0, FS) - 0.5f64.sqrt()).abs() < 1e-6);
    assert!(c.magnitude(1000.0, FS) <= 1e-4);
    for f in [0.0, 10.0, 1000.0] {
        assert!((c.magnitude(f, FS) - butterworth(f, 10.0)).abs() < 1e-4);
    }
    assert!(design_dc_filter(FS, 0.0).is_err());
    assert!(design_dc_filter(FS, 30000.0).is_err());
}

#[test]
fn dc_extract_examples() {
    let c = design_dc_filter(FS, 10.0).unwrap();
    let n = 2 * FS as usize;
    let settle = FS as usize;

    let y = dc_extract(&vec![0.3; n], &c);
    assert_eq!(y.len(), n);
    assert!(y[settle..].iter().all(|v| (v - 0.3).abs() < 1e-6));

    let tone: Vec<f64> = (0..n).map(|k| (2.0 * PI * 1000.0 * k as f64 / FS).sin()).collect();
    assert!(dc_extract(&tone, &c)[settle..].iter().all(|v| v.abs() <= 1e-4));

    let mix: Vec<f64> = (0..n).map(|k| 0.2 + (2.0 * PI * 500.0 * k as f64 / FS).sin()).collect();
    assert!(dc_extract(&mix, &c)[settle..].iter().all(|v| (v - 0.2).abs() <= 1e-3));
}

#[test]
fn xcorr_examples() {
    let s = noise(4000, 1);
    assert_eq!(align_xcorr(&s, &s, 50).unwrap(), 0);
    let (a, b) = delayed_pair(4000, 37, 100, 2);
    assert_eq!(align_xcorr(&a, &b, 100).unwrap(), 37);
    assert!(matches!(align_xcorr(&[1.0; 100], &[2.0; 100], 10), Err(Error::NoSignal(_))));
    assert!(align_xcorr(&s[..20], &s[..20], 10).is_err());
}

#[test]
fn xcorr_ties_prefer_small_lags() {
    // Period-4 signal: lags 0 and ±4 correlate equally well.
    let a: Vec<f64> = (0..400).map(|k| [1.0, 0.0, -1.0, 0.5][k % 4]).collect();
    assert_eq!(align_xcorr(&a, &a, 8).unwrap(), 0);
}

#[test]
fn window_examples() {
    let t = ramp_trace(256);
    let labels: Vec<f64> = (0..256).map(|k| k as f64 * 1e-3).collect();
    let ds = window(&t, &labels, 256, 17).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.label(0), labels[255] as f32 as f64);

    let t = ramp_trace(1024);
    let labels = vec![0.0; 1024];
    let ds = window(&t, &labels, 256, 64).unwrap();
    assert_eq!(ds.len(), 13);
    for k in 0..ds.len() {
        let s = k * 64;
        let w = ds.input(k);
        for j in 0..256 {
            assert_eq!(w[j].to_bits(), (t.i[s + j] as f64).to_bits());
            assert_eq!(w[256 + j].to_bits(), (t.v[s + j] as f64).to_bits());
        }
        assert_eq!(ds.t_index(k), (s + 255) as u64);
        assert_eq!(ds.scenario(k), Scenario::Heating);
        assert_eq!(ds.unit(k), "unit00");
    }
    assert!(matches!(window(&ramp_trace(100), &[0.0; 100], 256, 64), Err(Error::EmptyDataset(_))));
    assert!(window(&ramp_trace(300), &[0.0; 299], 256, 64).is_err());
}

fn random_dataset(seed: u64, count: usize) -> WindowedDataset {
    let mut ds = WindowedDataset::new(8);
    let s = noise(count * 16, seed);
    for k in 0..count {
        let w: Vec<f64> = s[k * 16..(k + 1) * 16]
            .iter()
            .enumerate()
            .map(|(j, v)| if j < 8 { 3.0 * v + 1.0 } else { 0.2 * v - 4.0 })
            .collect();
        ds.push(&w, k as f64 * 0.01, if k % 2 == 0 { "unit01" } else { "unit02" }, Scenario::Normal, k as u64)
            .unwrap();
    }
    ds
}

#[test]
fn standardization_examples() {
    let ds = random_dataset(3, 200);
    let st = compute_standardization(&ds).unwrap();
    let z = apply_standardization(&ds, &st);
    let again = compute_standardization(&z).unwrap();
    for c in 0..2 {
        assert!(again.mean[c].abs() < 1e-12);
        assert!((again.std[c] - 1.0).abs() < 1e-12);
    }
    let zz = apply_standardization(&z, &again);
    for (a, b) in zz.inputs().iter().zip(z.inputs()) {
        assert!((a - b).abs() < 1e-12);
    }
    let back = invert_standardization(&z, &st);
    for (a, b) in back.inputs().iter().zip(ds.inputs()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(z.labels(), ds.labels());

    let mut flat = WindowedDataset::new(4);
    flat.push(&[1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0], 0.0, "u", Scenario::Normal, 0).unwrap();
    assert!(matches!(compute_standardization(&flat), Err(Error::DegenerateChannel(1))));
    assert!(matches!(compute_standardization(&WindowedDataset::new(4)), Err(Error::EmptyDataset(_))));
}

#[test]
fn dataset_file_round_trip_and_corruption() {
    let t = ramp_trace(2000);
    let labels: Vec<f64> = (0..2000).map(|k| (k as f64 * 0.01).sin() * 0.3).collect();
    let ds = window(&t, &labels, 256, 64).unwrap();
    let bytes = ds.to_bytes();
    let back = WindowedDataset::from_bytes(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.exw");
    ds.save(&p).unwrap();
    assert_eq!(WindowedDataset::load(&p).unwrap(), ds);

    assert!(matches!(WindowedDataset::from_bytes(&bytes[..bytes.len() - 40]), Err(Error::Corrupt(_))));
    let mut flip = bytes.clone();
    flip[200] ^= 0x10;
    assert!(matches!(WindowedDataset::from_bytes(&flip), Err(Error::Corrupt(_))));
    let mut ver = bytes.clone();
    ver[3] = b'7';
    assert!(matches!(WindowedDataset::from_bytes(&ver), Err(Error::Version { found: 7, expected: 1 })));
    assert!(matches!(WindowedDataset::from_bytes(b"nope"), Err(Error::Corrupt(_))));
}

#[test]
fn unit_leakage_is_detected() {
    let ds = random_dataset(1, 10);
    let a = ds.filter(|k| ds.unit(k) == "unit01");
    let b = ds.filter(|k| ds.unit(k) == "unit02");
    assert!(assert_unit_disjoint(&[&a, &b]).is_ok());
    assert!(assert_unit_disjoint(&[&a, &ds]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filters_are_stable(fs in 8000.0f64..192000.0, frac in 1e-5f64..0.4999) {
        let c = design_dc_filter(fs, frac * fs).unwrap();
        prop_assert!(c.is_stable());
        prop_assert!(c.pole_radius() < 1.0);
    }

    #[test]
    fn dc_extract_is_linear(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let c = design_dc_filter(FS, 10.0).unwrap();
        let x = noise(3000, seed);
        let y = noise(3000, seed.wrapping_add(1));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (dc_extract(&x, &c), dc_extract(&y, &c), dc_extract(&mix, &c));
        for k in 0..mix.len() {
            prop_assert!((fm[k] - (a * fx[k] + b * fy[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn xcorr_recovers_any_lag_in_range(k in -60i64..=60, seed in any::<u64>()) {
        let (a, b) = delayed_pair(2000, k, 80, seed);
        prop_assert_eq!(align_xcorr(&a, &b, 60).unwrap(), k);
    }

    #[test]
    fn windowing_counts_and_copies(len in 1usize..600, n in 1usize..300, stride in 1usize..100) {
        let t = ramp_trace(len);
        let labels: Vec<f64> = (0..len).map(|k| k as f64).collect();
        match window(&t, &labels, n, stride) {
            Ok(ds) => {
                prop_assert!(n <= len);
                prop_assert_eq!(ds.len(), (len - n) / stride + 1);
                prop_assert_eq!(ds.len(), window_count(len, n, stride));
                for k in 0..ds.len() {
                    let end = k * stride + n - 1;
                    prop_assert!(end < len);
                    prop_assert_eq!(ds.label(k), end as f64);
                    prop_assert_eq!(ds.input(k)[n - 1], t.i[end] as f64);
                    prop_assert_eq!(ds.input(k)[2 * n - 1], t.v[end] as f64);
                }
            }
            Err(e) => {
                prop_assert!(n > len);
                prop_assert!(matches!(e, Error::EmptyDataset(_)), "unexpected error kind");
            }
        }
    }
}

#[test]
fn skew_repair_realigns_simulated_traces() {
    use excursion::sim::corpus::CorpusSpec;
    use excursion::sim::inject_clock_skew;
    let spec = CorpusSpec {
        duration: 1.0,
        seed: 4,
        ..Default::default()
    };
    let pop = spec.population().unwrap();
    let t = spec.simulate(0, &pop[0], Scenario::Normal).unwrap();
    let skewed = inject_clock_skew(&t, 250).unwrap();
    let (lag, fixed) = excursion::preproc::repair_skew(&skewed, 300).unwrap();
    assert!((lag - 250).abs() <= 2, "detected {lag}");
    assert_eq!(fixed.len(), skewed.len() - lag.unsigned_abs() as usize);
}
