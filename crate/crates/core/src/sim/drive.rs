use crate::error::{validation, Result};
use crate::preproc::filter::{design_highpass, design_lowpass, Biquad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveKind {
    /// Single sinusoid at `freqs[0]`, zero phase.
    Tone,
    /// Sum of sinusoids with seeded random phases; each carries `amplitude / len`.
    Multitone,
    /// Gaussian noise band-limited to `[freqs[0], freqs[1]]` (80 Hz–8 kHz when empty).
    BandNoise,
    /// Band noise with a 4 Hz amplitude modulation.
    SpeechLike,
    /// Multitone plus a DC offset.
    DcInjection,
}

impl DriveKind {
    pub fn name(self) -> &'static str {
        match self {
            DriveKind::Tone => "tone",
            DriveKind::Multitone => "multitone",
            DriveKind::BandNoise => "band_noise",
            DriveKind::SpeechLike => "speech",
            DriveKind::DcInjection => "dc_injection",
        }
    }
}

/// Voltage drive description.
///
/// `amplitude` is the peak for tonal kinds and √2 × RMS for noise kinds.
/// When `level_hold > 0` the AC level wanders between 25% and 100% of
/// `amplitude`, and the DC level between `±dc_offset`, along smooth random
/// knots spaced `level_hold` seconds apart; otherwise both are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSpec {
    pub kind: DriveKind,
    pub amplitude: f64,
    pub freqs: Vec<f64>,
    pub dc_offset: f64,
    pub duration: f64,
    pub seed: u64,
    pub level_hold: f64,
}

const AM_RATE: f64 = 4.0;
const AM_DEPTH: f64 = 0.9;
const LEVEL_FLOOR: f64 = 0.25;

impl DriveSpec {
    pub fn tone(freq: f64, amplitude: f64, duration: f64) -> Self {
        Self {
            kind: DriveKind::Tone,
            amplitude,
            freqs: vec![freq],
            dc_offset: 0.0,
            duration,
            seed: 0,
            level_hold: 0.0,
        }
    }

    /// Constant voltage (a zero-amplitude injection drive).
    pub fn constant(volts: f64, duration: f64) -> Self {
        Self {
            kind: DriveKind::DcInjection,
            amplitude: 0.0,
            freqs: vec![100.0],
            dc_offset: volts,
            duration,
            seed: 0,
            level_hold: 0.0,
        }
    }

    pub fn band_noise(amplitude: f64, duration: f64, seed: u64) -> Self {
        Self {
            kind: DriveKind::BandNoise,
            amplitude,
            freqs: vec![],
            dc_offset: 0.0,
            duration,
            seed,
            level_hold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(validation(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(validation(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.level_hold.is_finite() && self.level_hold >= 0.0) {
            return Err(validation("level_hold must be >= 0"));
        }
        if !self.dc_offset.is_finite() || (self.dc_offset != 0.0 && self.kind != DriveKind::DcInjection) {
            return Err(validation("a DC offset is only allowed on dc_injection drives"));
        }
        if let Some(f) = self.freqs.iter().find(|f| !(**f > 0.0 && **f < 24000.0)) {
            return Err(validation(format!("frequency {f} Hz outside (0, 24000)")));
        }
        let n = self.freqs.len();
        match self.kind {
            DriveKind::Tone if n != 1 => Err(validation("a tone takes exactly one frequency")),
            DriveKind::Multitone | DriveKind::DcInjection if n == 0 => {
                Err(validation("multitone drives need at least one frequency"))
            }
            DriveKind::BandNoise | DriveKind::SpeechLike if !(n == 0 || (n == 2 && self.freqs[0] < self.freqs[1])) => {
                Err(validation("noise drives take no frequencies or a [low, high] band"))
            }
            _ => Ok(()),
        }
    }

    /// Samples the drive at `rate` Hz for `count` samples starting at t = 0.
    pub fn synthesize(&self, rate: f64, count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let t = |n: usize| n as f64 / rate;
        let mut ac: Vec<f64> = match self.kind {
            DriveKind::Tone => {
                let w = 2.0 * PI * self.freqs[0];
                (0..count).map(|n| self.amplitude * (w * t(n)).sin()).collect()
            }
            DriveKind::Multitone | DriveKind::DcInjection => {
                let phases: Vec<f64> = self.freqs.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                let a = self.amplitude / self.freqs.len() as f64;
                (0..count)
                    .map(|n| {
                        self.freqs
                            .iter()
                            .zip(&phases)
                            .map(|(f, p)| a * (2.0 * PI * f * t(n) + p).sin())
                            .sum()
                    })
                    .collect()
            }
            DriveKind::BandNoise | DriveKind::SpeechLike => {
                let (lo, hi) = if self.freqs.is_empty() { (80.0, 8000.0) } else { (self.freqs[0], self.freqs[1]) };
                let mut x: Vec<f64> = (0..count).map(|_| rng.sample(StandardNormal)).collect();
                Biquad::new(design_highpass(rate, lo)?).run(&mut x);
                Biquad::new(design_lowpass(rate, hi)?).run(&mut x);
                if self.kind == DriveKind::SpeechLike {
                    let psi = rng.random_range(0.0..2.0 * PI);
                    for (n, v) in x.iter_mut().enumerate() {
                        *v *= 1.0 + AM_DEPTH * (2.0 * PI * AM_RATE * t(n) + psi).sin();
                    }
                }
                let rms = (x.iter().map(|v| v * v).sum::<f64>() / count.max(1) as f64).sqrt();
                let gain = if rms > 0.0 { self.amplitude / SQRT_2 / rms } else { 0.0 };
                x.iter_mut().for_each(|v| *v *= gain);
                x
            }
        };
        if self.level_hold > 0.0 {
            let ac_env = Envelope::new(&mut rng, self.duration, self.level_hold, LEVEL_FLOOR, 1.0);
            let dc_env = Envelope::new(&mut rng, self.duration, self.level_hold, -1.0, 1.0);
            for (n, v) in ac.iter_mut().enumerate() {
                *v = *v * ac_env.at(t(n)) + self.dc_offset * dc_env.at(t(n));
            }
        } else if self.dc_offset != 0.0 {
            ac.iter_mut().for_each(|v| *v += self.dc_offset);
        }
        Ok(ac)
    }
}

/// Random knots joined by raised-cosine segments.
struct Envelope {
    hold: f64,
    knots: Vec<f64>,
}

impl Envelope {
    fn new(rng: &mut ChaCha8Rng, duration: f64, hold: f64, lo: f64, hi: f64) -> Self {
        let n = (duration / hold).ceil() as usize + 2;
        Self {
            hold,
            knots: (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        let pos = t / self.hold;
        let k = (pos.floor() as usize).min(self.knots.len() - 2);
        let frac = (pos - k as f64).clamp(0.0, 1.0);
        let w = 0.5 - 0.5 * (PI * frac).cos();
        self.knots[k] * (1.0 - w) + self.knots[k + 1] * w
    }
}
