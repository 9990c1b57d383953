//! Command-line front end.
//!
//! Every command writes its outputs plus exactly one plain-text manifest
//! (`key = value`) recording the command, the effective configuration,
//! seeds, SHA-256 digests of inputs and outputs, the tool version and the
//! wall time. Failures exit with [`Error::exit_code`]; usage errors exit 2.

mod svg;

use crate::adapt::{BnAdaptConfig, BnAdapter, LayerSelection};
use crate::binio::sha256;
use crate::error::{validation, Error, Result};
use crate::kv::KeyValues;
use crate::models::{
    build_convnet, build_fftnet, dsp_fit, load_checkpoint, save_checkpoint, ConvNetConfig, FftNetConfig, Model,
    ModelKind,
};
use crate::preproc::{assert_unit_disjoint, repair_skew, trace_dataset, WindowedDataset};
use crate::quant::{calibrate, fold_bn, quant_report, quantize_model, CalibrationMode};
use crate::sim::corpus::{unit_id, CorpusSpec};
use crate::sim::{read_trace, trace_to_bytes, Scenario, SimTrace};
use crate::train::{evaluate, metrics_csv, metrics_from_predictions, train, TrainConfig};
use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const TRACE_EXT: &str = "exc";
pub const DATASET_EXT: &str = "exw";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Parser)]
#[command(name = "excursion", version, about = "Loudspeaker excursion simulation, DC-drift prediction and deployment tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a seeded population of units under each scenario.
    Simulate {
        /// Number of units (>= 1).
        #[arg(long, default_value_t = 14, value_parser = clap::value_parser!(u64).range(1..))]
        units: u64,
        /// Comma-separated scenarios: normal, heating, dc_injection.
        #[arg(long, default_value = "normal,heating,dc_injection")]
        scenarios: String,
        /// Relative per-parameter spread of the population, in [0, 0.5).
        #[arg(long, default_value_t = 0.1)]
        spread: f64,
        /// Trace duration, seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Label, optionally re-align, window and split traces by unit.
    Preprocess {
        /// Directory of trace files written by `simulate`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Window length in samples.
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Hop between window starts, samples.
        #[arg(long, default_value_t = 1024)]
        stride: usize,
        /// Units per train,val,test split; must sum to the unit count.
        #[arg(long, default_value = "8,4,2")]
        split: String,
        /// Re-align current and excursion by cross-correlation, searching
        /// lags up to this bound.
        #[arg(long)]
        repair_max_lag: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on `train.exw`, selecting on `val.exw`.
    Train {
        #[arg(long)]
        model: ModelKind,
        /// Directory holding the split datasets.
        #[arg(long)]
        data: PathBuf,
        /// Key-value config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Cosine-decay the learning rate to this value over the run.
        #[arg(long)]
        lr_final: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        batches_per_epoch: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output checkpoint; the history goes to `<out>.history.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file, or a directory holding `test.exw`.
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV.
        #[arg(long)]
        report: PathBuf,
        /// Optional per-window prediction CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Stream a dataset through a model with online batch-norm re-estimation.
    Adapt {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset whose windows form the stream, in stored order.
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Inferences per statistics update.
        #[arg(long, default_value_t = 256)]
        window: usize,
        /// final_bn_only or all_bn.
        #[arg(long, default_value = "final_bn_only")]
        layers: LayerSelection,
        /// Use the n denominator for the buffer standard deviation.
        #[arg(long)]
        biased: bool,
        /// Adaptation log CSV.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Fold batch norms, calibrate and write an INT8 checkpoint.
    Quantize {
        #[arg(long)]
        ckpt: PathBuf,
        /// Calibration dataset (training units only).
        #[arg(long)]
        calib: PathBuf,
        /// Clip activation ranges to this central percentile.
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Optional test set for an FP32-vs-INT8 report.
        #[arg(long, requires = "report")]
        test: Option<PathBuf>,
        /// Metrics CSV; per-layer SNR goes to `<report>.snr.csv`.
        #[arg(long, requires = "test")]
        report: Option<PathBuf>,
    },
    /// Render CSV outputs of other commands as SVG charts.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Accumulates the manifest of one command run.
struct Manifest {
    kv: KeyValues,
    start: Instant,
}

impl Manifest {
    fn new(command: &str) -> Self {
        let mut kv = KeyValues::default();
        kv.set("command", command);
        kv.set("tool_version", env!("CARGO_PKG_VERSION"));
        Self { kv, start: Instant::now() }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.kv.set(key, value);
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.kv.set(&format!("input.{name}.sha256"), hex::encode(sha256(&bytes)));
        Ok(())
    }

    fn output(&mut self, name: &str, bytes: &[u8]) {
        self.kv.set(&format!("output.{name}.sha256"), hex::encode(sha256(bytes)));
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.kv.set("wall_time_s", format!("{:.3}", self.start.elapsed().as_secs_f64()));
        std::fs::write(path, self.kv.render())?;
        Ok(())
    }
}

fn write_output(m: &mut Manifest, name: &str, path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    m.output(name, bytes);
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { units, scenarios, spread, duration, seed, out } => {
            simulate(units as usize, &scenarios, spread, duration, seed, &out)
        }
        Command::Preprocess { input, n, stride, split, repair_max_lag, out } => {
            preprocess(&input, n, stride, &split, repair_max_lag, &out)
        }
        Command::Train {
            model,
            data,
            config,
            epochs,
            lr,
            lr_final,
            batch_size,
            batches_per_epoch,
            patience,
            seed,
            out,
        } => {
            let mut kv = match &config {
                Some(p) => KeyValues::parse(&std::fs::read_to_string(p)?)?,
                None => KeyValues::default(),
            };
            let overrides = [
                ("epochs", epochs.map(|v| v.to_string())),
                ("lr", lr.map(|v| v.to_string())),
                ("lr_final", lr_final.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("batches_per_epoch", batches_per_epoch.map(|v| v.to_string())),
                ("patience", patience.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
            ];
            for (k, v) in overrides {
                if let Some(v) = v {
                    kv.set(k, v);
                }
            }
            train_cmd(model, &data, config.as_deref(), &kv, &out)
        }
        Command::Eval { ckpt, data, report, predictions } => eval_cmd(&ckpt, &data, &report, predictions.as_deref()),
        Command::Adapt { ckpt, stream, alpha, window, layers, biased, report, predictions } => {
            let cfg = BnAdaptConfig { window, alpha, selection: layers, unbiased: !biased };
            adapt_cmd(&ckpt, &stream, cfg, &report, predictions.as_deref())
        }
        Command::Quantize { ckpt, calib, percentile, out, test, report } => {
            let mode = percentile.map_or(CalibrationMode::MinMax, CalibrationMode::Percentile);
            quantize_cmd(&ckpt, &calib, mode, &out, test.as_deref().zip(report.as_deref()))
        }
        Command::Report { inputs, out } => report_cmd(&inputs, &out),
    }
}

fn parse_scenarios(list: &str) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s: Scenario = name.parse()?;
        if out.contains(&s) {
            return Err(validation(format!("scenario '{name}' listed twice")));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(validation("no scenarios given"));
    }
    Ok(out)
}

pub fn trace_file_name(unit: &str, scenario: Scenario) -> String {
    format!("{unit}_{}.{TRACE_EXT}", scenario.name())
}

fn simulate(units: usize, scenarios: &str, spread: f64, duration: f64, seed: u64, out: &Path) -> Result<()> {
    let spec = CorpusSpec {
        units,
        spread,
        duration,
        scenarios: parse_scenarios(scenarios)?,
        seed,
        ..Default::default()
    };
    let pop = spec.population()?;
    std::fs::create_dir_all(out)?;
    let mut m = Manifest::new("simulate");
    m.set("units", units);
    m.set("scenarios", scenarios);
    m.set("spread", spread);
    m.set("duration_s", duration);
    m.set("seed", seed);
    for (u, params) in pop.iter().enumerate() {
        for &s in &spec.scenarios {
            let t = spec.simulate(u, params, s)?;
            let name = trace_file_name(&unit_id(u), s);
            let bytes = trace_to_bytes(&t)?;
            write_output(&mut m, &name, &out.join(&name), &bytes)?;
            log::info!("wrote {name} ({} samples)", t.len());
        }
    }
    m.write(&out.join("manifest.txt"))
}

fn parse_split(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(validation(format!("split '{s}' must have three comma-separated counts")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| validation(format!("split count '{p}' is not an integer")))?;
    }
    Ok(out)
}

fn preprocess(input: &Path, n: usize, stride: usize, split: &str, repair: Option<usize>, out: &Path) -> Result<()> {
    let counts = parse_split(split)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == TRACE_EXT));
    files.sort();
    if files.is_empty() {
        return Err(validation(format!("no .{TRACE_EXT} traces in {}", input.display())));
    }
    let mut m = Manifest::new("preprocess");
    let mut by_unit: BTreeMap<String, Vec<(Scenario, PathBuf)>> = BTreeMap::new();
    for f in &files {
        let t = read_trace(f)?;
        by_unit.entry(t.unit_id.clone()).or_default().push((t.scenario, f.clone()));
    }
    let scen_sets: Vec<Vec<Scenario>> = by_unit
        .values()
        .map(|v| {
            let mut s: Vec<Scenario> = v.iter().map(|(s, _)| *s).collect();
            s.sort();
            s
        })
        .collect();
    let all: Vec<Scenario> = {
        let mut a: Vec<Scenario> = scen_sets.iter().flatten().copied().collect();
        a.sort();
        a.dedup();
        a
    };
    for (unit, s) in by_unit.keys().zip(&scen_sets) {
        if *s != all {
            return Err(validation(format!("unit {unit} is missing traces (has {s:?}, expected {all:?})")));
        }
    }
    let total: usize = counts.iter().sum();
    if total != by_unit.len() {
        return Err(validation(format!(
            "split {split} covers {total} units but {} were found",
            by_unit.len()
        )));
    }
    std::fs::create_dir_all(out)?;
    m.set("n", n);
    m.set("stride", stride);
    m.set("split", split);
    m.set("repair_max_lag", repair.map_or("none".to_string(), |v| v.to_string()));

    let mut sets: Vec<WindowedDataset> = (0..3).map(|_| WindowedDataset::new(n)).collect();
    let mut which = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        which.extend(std::iter::repeat_n(k, c));
    }
    for ((unit, traces), &k) in by_unit.iter().zip(&which) {
        m.set(&format!("unit.{unit}"), SPLIT_NAMES[k]);
        for (_, path) in traces {
            m.input(&file_name(path), path)?;
            let mut t: SimTrace = read_trace(path)?;
            if let Some(max_lag) = repair {
                let (lag, fixed) = repair_skew(&t, max_lag)?;
                m.set(&format!("lag.{}", file_name(path)), lag);
                t = fixed;
            }
            sets[k].extend(&trace_dataset(&t, n, stride)?)?;
        }
    }
    assert_unit_disjoint(&[&sets[0], &sets[1], &sets[2]])?;
    for (name, ds) in SPLIT_NAMES.iter().zip(&sets) {
        let file = format!("{name}.{DATASET_EXT}");
        m.set(&format!("windows.{name}"), ds.len());
        write_output(&mut m, &file, &out.join(&file), &ds.to_bytes())?;
    }
    m.write(&out.join("manifest.txt"))
}

const TRAIN_KEYS: [&str; 13] = [
    "batch_size",
    "epochs",
    "lr",
    "lr_final",
    "beta1",
    "beta2",
    "adam_eps",
    "delta",
    "clip_norm",
    "patience",
    "bn_momentum",
    "batches_per_epoch",
    "seed",
];
const MODEL_KEYS: [&str; 9] = [
    "model.channels",
    "model.blocks",
    "model.modes",
    "model.heads",
    "model.kernel",
    "model.pool",
    "model.per_mode",
    "model.stem_stride",
    "model.init_seed",
];

fn build_model(kind: ModelKind, kv: &KeyValues, input_len: usize, train_set: &WindowedDataset) -> Result<Model> {
    let seed = kv.get("model.init_seed")?.unwrap_or(0);
    match kind {
        ModelKind::FftNet => {
            let d = FftNetConfig::default();
            let cfg = FftNetConfig {
                channels: kv.get("model.channels")?.unwrap_or(d.channels),
                blocks: kv.get("model.blocks")?.unwrap_or(d.blocks),
                modes: kv.get("model.modes")?.unwrap_or((input_len / 2).min(d.modes)),
                heads: kv.get("model.heads")?.unwrap_or(d.heads),
                kernel: kv.get("model.kernel")?.unwrap_or(d.kernel),
                pool: kv.get("model.pool")?.unwrap_or(d.pool),
                input_len,
                per_mode: kv.get("model.per_mode")?.unwrap_or(d.per_mode),
            };
            build_fftnet(cfg, seed)
        }
        ModelKind::ConvNet => {
            let d = ConvNetConfig::default();
            let cfg = ConvNetConfig {
                channels: kv.get("model.channels")?.unwrap_or(d.channels),
                blocks: kv.get("model.blocks")?.unwrap_or(d.blocks),
                kernel: kv.get("model.kernel")?.unwrap_or(d.kernel),
                pool: kv.get("model.pool")?.unwrap_or(d.pool),
                input_len,
                stem_stride: kv.get("model.stem_stride")?.unwrap_or(d.stem_stride),
            };
            build_convnet(cfg, seed)
        }
        ModelKind::Dsp => dsp_fit(train_set),
    }
}

fn load_split(dir: &Path, name: &str, m: &mut Manifest) -> Result<WindowedDataset> {
    let path = dir.join(format!("{name}.{DATASET_EXT}"));
    m.input(name, &path)?;
    WindowedDataset::load(&path)
}

fn train_cmd(kind: ModelKind, data: &Path, config: Option<&Path>, kv: &KeyValues, out: &Path) -> Result<()> {
    for k in kv.keys() {
        if !TRAIN_KEYS.contains(&k) && !MODEL_KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
    }
    let mut m = Manifest::new("train");
    if let Some(p) = config {
        m.input("config", p)?;
    }
    let mut cfg = TrainConfig::default();
    cfg.apply(kv)?;
    let tr = load_split(data, "train", &mut m)?;
    let va = load_split(data, "val", &mut m)?;
    let model = build_model(kind, kv, tr.n(), &tr)?;
    let (trained, history) = train(&model, &tr, &va, &cfg)?;

    m.set("model", kind);
    let mut echo = KeyValues::default();
    cfg.echo(&mut echo);
    for k in echo.keys() {
        m.set(&format!("config.{k}"), echo.get_str(k).unwrap_or_default());
    }
    for k in MODEL_KEYS {
        if let Some(v) = kv.get_str(k) {
            m.set(&format!("config.{k}"), v);
        }
    }
    m.set("params", trained.count_params());
    m.set("best_epoch", history.best_epoch);
    save_checkpoint(&trained, out)?;
    m.output(&file_name(out), &std::fs::read(out)?);
    let hist = sibling(out, ".history.csv");
    write_output(&mut m, &file_name(&hist), &hist, history.to_csv().as_bytes())?;
    m.write(&sibling(out, ".manifest"))
}

fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(format!("test.{DATASET_EXT}"))
    } else {
        data.to_path_buf()
    }
}

/// Per-window `index,unit,scenario,t_index,truth_mm,pred_mm` rows.
pub fn predictions_csv(ds: &WindowedDataset, pred: &[f64]) -> String {
    let mut out = String::from("index,unit,scenario,t_index,truth_mm,pred_mm\n");
    for (k, p) in pred.iter().enumerate() {
        let _ = writeln!(out, "{k},{},{},{},{:.9},{:.9}", ds.unit(k), ds.scenario(k), ds.t_index(k), ds.label(k), p);
    }
    out
}

fn eval_cmd(ckpt: &Path, data: &Path, report: &Path, predictions: Option<&Path>) -> Result<()> {
    let mut m = Manifest::new("eval");
    m.input("checkpoint", ckpt)?;
    let path = dataset_path(data);
    m.input("dataset", &path)?;
    let model = load_checkpoint(ckpt)?;
    let ds = WindowedDataset::load(&path)?;
    let pred = model.predict_dataset(&ds)?;
    let metrics = metrics_from_predictions(&pred, &ds)?;
    m.set("mean_l1_mm", format!("{:.9}", metrics.mean_l1));
    m.set("max_l1_mm", format!("{:.9}", metrics.max_l1));
    m.set("pct_under_0p1mm", format!("{:.4}", metrics.pct_under_0p1mm));
    write_output(&mut m, &file_name(report), report, metrics_csv(&metrics).as_bytes())?;
    if let Some(p) = predictions {
        write_output(&mut m, &file_name(p), p, predictions_csv(&ds, &pred).as_bytes())?;
    }
    println!(
        "mean {:.6} mm, max {:.6} mm, {:.2}% under 0.1 mm ({} windows)",
        metrics.mean_l1, metrics.max_l1, metrics.pct_under_0p1mm, metrics.count
    );
    m.write(&sibling(report, ".manifest"))
}

fn adapt_cmd(ckpt: &Path, stream: &Path, cfg: BnAdaptConfig, report: &Path, predictions: Option<&Path>) -> Result<()> {
    let mut m = Manifest::new("adapt");
    m.input("checkpoint", ckpt)?;
    m.input("stream", stream)?;
    let model = load_checkpoint(ckpt)?;
    let ds = WindowedDataset::load(stream)?;
    if ds.n() != model.input_len() {
        return Err(crate::error::shape("stream windows do not match the model input"));
    }
    let mut a = BnAdapter::new(&model, cfg)?;
    let pred = a.run(ds.inputs())?;
    let frozen = evaluate(&model, &ds)?;
    let adapted = metrics_from_predictions(&pred, &ds)?;
    m.set("alpha", cfg.alpha);
    m.set("window", cfg.window);
    m.set("layers", format!("{:?}", cfg.selection));
    m.set("unbiased", cfg.unbiased);
    m.set("frozen.mean_l1_mm", format!("{:.9}", frozen.mean_l1));
    m.set("adapted.mean_l1_mm", format!("{:.9}", adapted.mean_l1));
    m.set("frozen.max_l1_mm", format!("{:.9}", frozen.max_l1));
    m.set("adapted.max_l1_mm", format!("{:.9}", adapted.max_l1));
    m.set("skipped_sigma_updates", a.skipped_sigma_updates());
    write_output(&mut m, &file_name(report), report, a.log_csv().as_bytes())?;
    if let Some(p) = predictions {
        write_output(&mut m, &file_name(p), p, predictions_csv(&ds, &pred).as_bytes())?;
    }
    println!("frozen mean {:.6} mm, adapted mean {:.6} mm", frozen.mean_l1, adapted.mean_l1);
    m.write(&sibling(report, ".manifest"))
}

fn quantize_cmd(ckpt: &Path, calib: &Path, mode: CalibrationMode, out: &Path, test: Option<(&Path, &Path)>) -> Result<()> {
    let mut m = Manifest::new("quantize");
    m.input("checkpoint", ckpt)?;
    m.input("calibration", calib)?;
    let model = load_checkpoint(ckpt)?;
    let folded = fold_bn(&model)?;
    let ranges = calibrate(&folded, &WindowedDataset::load(calib)?, mode)?;
    let q = quantize_model(&folded, &ranges)?;
    m.set("calibration", format!("{mode:?}"));
    for (name, (lo, hi)) in &ranges.ranges {
        m.set(&format!("range.{name}"), format!("{lo:.9e},{hi:.9e}"));
    }
    write_output(&mut m, &file_name(out), out, &q.to_bytes())?;
    if let Some((test, report)) = test {
        m.input("test", test)?;
        let rep = quant_report(&model, &q, &WindowedDataset::load(test)?)?;
        write_output(&mut m, &file_name(report), report, rep.metrics_csv().as_bytes())?;
        let snr = sibling(report, ".snr.csv");
        write_output(&mut m, &file_name(&snr), &snr, rep.snr_csv().as_bytes())?;
        println!("fp32 mean {:.6} mm, int8 mean {:.6} mm", rep.fp32.mean_l1, rep.int8.mean_l1);
    }
    m.write(&sibling(out, ".manifest"))
}

fn report_cmd(inputs: &[PathBuf], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut m = Manifest::new("report");
    let mut index = String::from("input,kind,chart\n");
    for (k, path) in inputs.iter().enumerate() {
        m.input(&file_name(path), path)?;
        let text = std::fs::read_to_string(path)?;
        let (kind, chart) = svg::render(&text).ok_or_else(|| {
            validation(format!("{}: not a predictions, history, adaptation or quantization CSV", path.display()))
        })?;
        let stem = path.file_stem().map_or_else(|| format!("input{k}"), |s| s.to_string_lossy().into_owned());
        let name = format!("{k:02}_{stem}.svg");
        write_output(&mut m, &name, &out.join(&name), chart.as_bytes())?;
        let copy = format!("{k:02}_{stem}.csv");
        write_output(&mut m, &copy, &out.join(&copy), text.as_bytes())?;
        let _ = writeln!(index, "{},{kind},{name}", file_name(path));
    }
    write_output(&mut m, "index.csv", &out.join("index.csv"), index.as_bytes())?;
    m.write(&out.join("manifest.txt"))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
