use super::{DriveSpec, Scenario, SimTrace, SpeakerParams, FS};
use crate::error::{Error, Result};

/// Fixed-step RK4 integrator for one speaker.
///
/// State is excursion (mm), velocity (m/s) and the low-passed dissipated
/// power (W) that drives voice-coil heating. Current is algebraic in the
/// state: `i = (v − φ(x)·ẋ) / R`.
#[derive(Debug, Clone)]
pub struct Simulator {
    p: SpeakerParams,
    thermal: bool,
    h: f64,
    state: [f64; 3],
}

impl Simulator {
    pub fn new(params: SpeakerParams, thermal: bool, fs: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            p: params,
            thermal,
            h: 1.0 / fs,
            state: [0.0; 3],
        })
    }

    pub fn excursion_mm(&self) -> f64 {
        self.state[0]
    }

    pub fn velocity(&self) -> f64 {
        self.state[1]
    }

    pub fn resistance(&self) -> f64 {
        self.resistance_at(self.state[2])
    }

    fn resistance_at(&self, power: f64) -> f64 {
        if self.thermal {
            self.p.r_eb + self.p.thermal_gain * power
        } else {
            self.p.r_eb
        }
    }

    /// Coil current for voltage `v` at the present state.
    pub fn current(&self, v: f64) -> f64 {
        self.current_at(&self.state, v)
    }

    #[inline]
    fn current_at(&self, s: &[f64; 3], v: f64) -> f64 {
        (v - self.p.phi(s[0]) * s[1]) / self.resistance_at(s[2])
    }

    /// Kinetic plus spring potential energy, J.
    pub fn mechanical_energy(&self) -> f64 {
        let [x, u, _] = self.state;
        let [b1, b2] = self.p.k_poly;
        let potential_mj = self.p.k0 * (x * x / 2.0 + b1 * x.powi(3) / 3.0 + b2 * x.powi(4) / 4.0);
        0.5 * self.p.mass * 1e-3 * u * u + potential_mj * 1e-3
    }

    #[inline]
    fn deriv(&self, s: &[f64; 3], v: f64) -> [f64; 3] {
        let [x, u, pw] = *s;
        let r = self.resistance_at(pw);
        let i = (v - self.p.phi(x) * u) / r;
        let force = self.p.phi(x) * i - self.p.damping * u - self.p.stiffness(x) * x;
        let dp = if self.thermal { (i * i * r - pw) / self.p.thermal_tau } else { 0.0 };
        [1e3 * u, force / (self.p.mass * 1e-3), dp]
    }

    /// One RK4 step given the drive at the start, midpoint and end.
    pub fn step(&mut self, v0: f64, v_mid: f64, v1: f64) {
        let h = self.h;
        let s = self.state;
        let add = |a: &[f64; 3], k: &[f64; 3], f: f64| [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2]];
        let k1 = self.deriv(&s, v0);
        let k2 = self.deriv(&add(&s, &k1, h / 2.0), v_mid);
        let k3 = self.deriv(&add(&s, &k2, h / 2.0), v_mid);
        let k4 = self.deriv(&add(&s, &k3, h), v1);
        for j in 0..3 {
            self.state[j] = s[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
}

/// Integrates `params` under `drive` at 48 kHz. Heating enables the thermal
/// resistance model; the other scenarios keep `R_eb` fixed.
pub fn simulate_trace(params: &SpeakerParams, drive: &DriveSpec, scenario: Scenario) -> Result<SimTrace> {
    drive.validate()?;
    let len = (drive.duration * FS).round() as usize;
    let fine = drive.synthesize(2.0 * FS, 2 * len + 1)?;
    let mut sim = Simulator::new(*params, scenario == Scenario::Heating, FS)?;
    let limit = 10.0 * params.x_max;
    let mut tr = SimTrace::with_capacity(scenario, len);
    for n in 0..len {
        let x = sim.excursion_mm();
        if !(x.abs() <= limit) || !sim.velocity().is_finite() {
            return Err(Error::SimulationBlowUp { index: n, excursion_mm: x });
        }
        let v = fine[2 * n];
        tr.push(v, sim.current(v), x);
        sim.step(v, fine[2 * n + 1], fine[2 * n + 2]);
    }
    Ok(tr)
}
