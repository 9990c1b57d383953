use crate::error::{validation, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lumped parameters of one speaker unit.
///
/// Excursion-dependent terms are polynomials in x measured in millimetres:
/// `φ(x) = φ₀(1 − a1·x − a2·x²)` and `k(x) = k0(1 + b1·x + b2·x²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerParams {
    /// Blocked electrical resistance, Ω.
    pub r_eb: f64,
    /// Transduction coefficient at rest, N/A.
    pub phi0: f64,
    /// `[a1 (1/mm), a2 (1/mm²)]`.
    pub bl_poly: [f64; 2],
    /// Moving mass, g.
    pub mass: f64,
    /// Mechanical resistance, N·s/m.
    pub damping: f64,
    /// Linear stiffness, N/mm.
    pub k0: f64,
    /// `[b1 (1/mm), b2 (1/mm²)]`.
    pub k_poly: [f64; 2],
    /// Rated excursion, mm.
    pub x_max: f64,
    /// Voice-coil heating time constant, s.
    pub thermal_tau: f64,
    /// Resistance rise per dissipated watt, Ω/W.
    pub thermal_gain: f64,
}

impl Default for SpeakerParams {
    fn default() -> Self {
        Self {
            r_eb: 6.0,
            phi0: 1.0,
            bl_poly: [0.3, 0.6],
            mass: 0.4,
            damping: 0.12,
            k0: 2.0,
            k_poly: [0.3, 2.0],
            x_max: 0.45,
            thermal_tau: 5.0,
            thermal_gain: 0.5,
        }
    }
}

impl SpeakerParams {
    /// Same unit with every nonlinearity switched off.
    pub fn linearized(mut self) -> Self {
        self.bl_poly = [0.0; 2];
        self.k_poly = [0.0; 2];
        self
    }

    /// `φ(x)` with x in mm.
    #[inline]
    pub fn phi(&self, x_mm: f64) -> f64 {
        self.phi0 * (1.0 - self.bl_poly[0] * x_mm - self.bl_poly[1] * x_mm * x_mm)
    }

    /// `k(x)` in N/mm with x in mm.
    #[inline]
    pub fn stiffness(&self, x_mm: f64) -> f64 {
        self.k0 * (1.0 + self.k_poly[0] * x_mm + self.k_poly[1] * x_mm * x_mm)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.r_eb,
            self.phi0,
            self.bl_poly[0],
            self.bl_poly[1],
            self.mass,
            self.damping,
            self.k0,
            self.k_poly[0],
            self.k_poly[1],
            self.x_max,
            self.thermal_tau,
            self.thermal_gain,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(validation("speaker parameters must be finite"));
        }
        let positive = [
            ("r_eb", self.r_eb),
            ("phi0", self.phi0),
            ("mass", self.mass),
            ("k0", self.k0),
            ("x_max", self.x_max),
            ("thermal_tau", self.thermal_tau),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(validation(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.damping < 0.0 || self.thermal_gain < 0.0 {
            return Err(validation("damping and thermal_gain must be >= 0"));
        }
        let span = 2.0 * self.x_max;
        let phi_min = quadratic_min(-self.bl_poly[0], -self.bl_poly[1], span);
        if phi_min <= 0.0 {
            return Err(validation(format!(
                "transduction factor reaches {:.4} of phi0 within ±{span} mm",
                phi_min
            )));
        }
        let k_min = quadratic_min(self.k_poly[0], self.k_poly[1], span);
        if k_min <= 0.0 {
            return Err(validation(format!("stiffness reaches {:.4} of k0 within ±{span} mm", k_min)));
        }
        Ok(())
    }
}

/// Minimum of `1 + p·x + q·x²` over `|x| ≤ span`.
fn quadratic_min(p: f64, q: f64, span: f64) -> f64 {
    let f = |x: f64| 1.0 + p * x + q * x * x;
    let mut m = f(-span).min(f(span));
    if q > 0.0 {
        let vertex = -p / (2.0 * q);
        if vertex.abs() <= span {
            m = m.min(f(vertex));
        }
    }
    m
}

/// Draws `n` units around `base`, each field scaled by an independent
/// uniform factor in `[1 − spread, 1 + spread]`. Sets violating the
/// parameter invariants are redrawn.
pub fn make_unit_population(base: &SpeakerParams, n: usize, spread: f64, seed: u64) -> Result<Vec<SpeakerParams>> {
    if n == 0 {
        return Err(validation("population size must be >= 1"));
    }
    if !(0.0..0.5).contains(&spread) {
        return Err(validation(format!("spread must lie in [0, 0.5), got {spread}")));
    }
    base.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut f = || if spread == 0.0 { 1.0 } else { rng.random_range(1.0 - spread..=1.0 + spread) };
        let p = SpeakerParams {
            r_eb: base.r_eb * f(),
            phi0: base.phi0 * f(),
            bl_poly: [base.bl_poly[0] * f(), base.bl_poly[1] * f()],
            mass: base.mass * f(),
            damping: base.damping * f(),
            k0: base.k0 * f(),
            k_poly: [base.k_poly[0] * f(), base.k_poly[1] * f()],
            x_max: base.x_max * f(),
            thermal_tau: base.thermal_tau * f(),
            thermal_gain: base.thermal_gain * f(),
        };
        if p.validate().is_ok() {
            out.push(p);
        }
    }
    Ok(out)
}
