//! Scenario drive recipes and seeded multi-unit corpus generation.

use super::{make_unit_population, simulate_trace, DriveKind, DriveSpec, Scenario, SimTrace, SpeakerParams};
use crate::binio::derive_seed;
use crate::error::{validation, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Population and drive settings shared by every trace of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub base: SpeakerParams,
    pub units: usize,
    pub spread: f64,
    pub duration: f64,
    pub scenarios: Vec<Scenario>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            base: SpeakerParams::default(),
            units: 14,
            spread: 0.1,
            duration: 60.0,
            scenarios: Scenario::ALL.to_vec(),
            seed: 0,
        }
    }
}

pub fn unit_id(index: usize) -> String {
    format!("unit{index:02}")
}

/// Drive used for `scenario`; levels, tones and noise are drawn from `seed`.
///
/// * normal: speech-like noise, 1–2.5 V.
/// * heating: three tones in 60–300 Hz, 2–5 V peak, thermal model active.
/// * dc_injection: three tones, 0.5–2 V, on a DC level wandering within
///   ±(3–7) V.
pub fn scenario_drive(scenario: Scenario, duration: f64, seed: u64) -> DriveSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tones = |rng: &mut ChaCha8Rng| (0..3).map(|_| rng.random_range(60.0..300.0)).collect::<Vec<f64>>();
    match scenario {
        Scenario::Normal => DriveSpec {
            kind: DriveKind::SpeechLike,
            amplitude: rng.random_range(1.0..2.5),
            freqs: vec![],
            dc_offset: 0.0,
            duration,
            seed: rng.random(),
            level_hold: 3.0,
        },
        Scenario::Heating => DriveSpec {
            kind: DriveKind::Multitone,
            amplitude: rng.random_range(2.0..5.0),
            freqs: tones(&mut rng),
            dc_offset: 0.0,
            duration,
            seed: rng.random(),
            level_hold: 4.0,
        },
        Scenario::DcInjection => DriveSpec {
            kind: DriveKind::DcInjection,
            amplitude: rng.random_range(0.5..2.0),
            freqs: tones(&mut rng),
            dc_offset: rng.random_range(3.0..7.0),
            duration,
            seed: rng.random(),
            level_hold: 2.0,
        },
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(validation("corpus needs at least one unit"));
        }
        if self.scenarios.is_empty() {
            return Err(validation("corpus needs at least one scenario"));
        }
        if !(self.duration > 0.0) {
            return Err(validation("trace duration must be > 0"));
        }
        Ok(())
    }

    pub fn population(&self) -> Result<Vec<SpeakerParams>> {
        self.validate()?;
        make_unit_population(&self.base, self.units, self.spread, derive_seed(self.seed, &[0]))
    }

    /// Simulates one (unit, scenario) trace; `params` is that unit's entry
    /// of [`CorpusSpec::population`].
    pub fn simulate(&self, unit: usize, params: &SpeakerParams, scenario: Scenario) -> Result<SimTrace> {
        let seed = derive_seed(self.seed, &[1, unit as u64, scenario.code() as u64]);
        let drive = scenario_drive(scenario, self.duration, seed);
        let mut t = simulate_trace(params, &drive, scenario)?;
        t.unit_id = unit_id(unit);
        Ok(t)
    }
}
