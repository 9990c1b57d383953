//! Ground-truth (voltage, current, excursion) generator built on a
//! nonlinear lumped loudspeaker model.

pub mod corpus;
mod drive;
mod engine;
mod io;
mod params;

pub use drive::{DriveKind, DriveSpec};
pub use engine::{simulate_trace, Simulator};
pub use io::{read_trace, trace_from_bytes, trace_to_bytes, write_trace, write_trace_csv};
pub use params::{make_unit_population, SpeakerParams};

use crate::error::{validation, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

/// Sample rate of every trace, Hz.
pub const FS: f64 = 48000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Normal,
    Heating,
    DcInjection,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Normal, Scenario::Heating, Scenario::DcInjection];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::Heating => "heating",
            Scenario::DcInjection => "dc_injection",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| validation(format!("unknown scenario '{s}' (expected normal, heating or dc_injection)")))
    }
}

/// Synchronized voltage (V), current (A) and excursion (mm) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub fs: u32,
    pub unit_id: String,
    pub scenario: Scenario,
    pub v: Vec<f32>,
    pub i: Vec<f32>,
    pub x: Vec<f32>,
}

impl SimTrace {
    pub(crate) fn with_capacity(scenario: Scenario, n: usize) -> Self {
        Self {
            fs: FS as u32,
            unit_id: String::new(),
            scenario,
            v: Vec::with_capacity(n),
            i: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, v: f64, i: f64, x: f64) {
        self.v.push(v as f32);
        self.i.push(i as f32);
        self.x.push(x as f32);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.x.len() || self.i.len() != self.x.len() {
            return Err(validation("trace channels have different lengths"));
        }
        if self.fs != FS as u32 {
            return Err(validation(format!("trace sample rate {} != 48000", self.fs)));
        }
        Ok(())
    }
}

/// Adds white Gaussian noise to `x` (and to `i` when `on_current`) so each
/// noisy channel has the requested SNR. `snr_db = +∞` returns the trace
/// unchanged; the voltage is never touched.
pub fn add_noise(trace: &SimTrace, snr_db: f64, seed: u64, on_current: bool) -> Result<SimTrace> {
    if snr_db == f64::INFINITY {
        return Ok(trace.clone());
    }
    if !snr_db.is_finite() {
        return Err(validation(format!("snr must be finite or +inf, got {snr_db}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = trace.clone();
    let mut corrupt = |ch: &mut [f32], name: &str| -> Result<()> {
        let power = ch.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / ch.len().max(1) as f64;
        if power == 0.0 {
            return Err(Error::NoSignal(format!("channel {name} has zero power")));
        }
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let dist = Normal::new(0.0, sigma).map_err(|e| validation(e.to_string()))?;
        for v in ch.iter_mut() {
            *v = (*v as f64 + dist.sample(&mut rng)) as f32;
        }
        Ok(())
    };
    corrupt(&mut out.x, "x")?;
    if on_current {
        corrupt(&mut out.i, "i")?;
    }
    Ok(out)
}

/// Delays `x` by `lag` samples relative to `(v, i)` (advances it for a
/// negative lag); both edges are trimmed so the channels stay equal length.
pub fn inject_clock_skew(trace: &SimTrace, lag: i64) -> Result<SimTrace> {
    let len = trace.len();
    let a = lag.unsigned_abs() as usize;
    if 2 * a >= len {
        return Err(validation(format!("lag {lag} must satisfy |lag| < len/2 = {}", len / 2)));
    }
    let keep = len - a;
    let (ev, ex) = if lag >= 0 { (a, 0) } else { (0, a) };
    Ok(SimTrace {
        fs: trace.fs,
        unit_id: trace.unit_id.clone(),
        scenario: trace.scenario,
        v: trace.v[ev..ev + keep].to_vec(),
        i: trace.i[ev..ev + keep].to_vec(),
        x: trace.x[ex..ex + keep].to_vec(),
    })
}
