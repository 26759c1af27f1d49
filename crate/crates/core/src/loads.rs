//! Heat-generation models and time-varying power schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Faraday constant, C/mol.
pub const FARADAY: f64 = 96_485.0;

/// Stefan–Boltzmann constant, W/(m² K⁴).
pub const STEFAN_BOLTZMANN: f64 = 5.670_374_419e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatGenParams {
    /// Current, A.
    pub current: f64,
    /// Internal resistance, Ω.
    pub resistance: f64,
    /// Reaction entropy change, J/(mol K).
    pub entropy_change: f64,
    /// Electrons per reaction.
    pub electrons: f64,
}

impl HeatGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.resistance >= 0.0) {
            return Err(Error::Invalid("internal resistance must be non-negative".into()));
        }
        if !(self.electrons >= 1.0) {
            return Err(Error::Invalid("electrons per reaction must be at least 1".into()));
        }
        Ok(())
    }
}

/// Joule heating plus reversible entropic heat at cell temperature `t_b` (K).
/// Negative when entropy absorption dominates.
pub fn battery_heat_rate(p: &HeatGenParams, t_b: f64) -> f64 {
    let i = p.current;
    i * i * p.resistance - i * t_b * (p.entropy_change / (p.electrons * FARADAY))
}

pub fn heater_power(volts: f64, amps: f64) -> f64 {
    volts * amps
}

/// Linearized radiative exchange coefficient 4εσT³ (T in kelvin).
pub fn radiative_coefficient(emissivity: f64, t_mean: f64) -> f64 {
    4.0 * emissivity * STEFAN_BOLTZMANN * t_mean.powi(3)
}

/// Piecewise-constant power schedule over right-open intervals
/// `[t_start_i, t_start_{i+1})`. Serialized as `[[t_start_s, watts], ...]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PowerProfile {
    segments: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for PowerProfile {
    type Error = Error;

    fn try_from(segments: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(segments)
    }
}

impl From<PowerProfile> for Vec<(f64, f64)> {
    fn from(p: PowerProfile) -> Self {
        p.segments
    }
}

impl PowerProfile {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Invalid("profile start times must be strictly increasing".into()));
            }
        }
        for &(t, p) in &segments {
            if !t.is_finite() || !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Invalid("profile power must be finite and non-negative".into()));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(power: f64) -> Self {
        Self {
            segments: vec![(0.0, power.max(0.0))],
        }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Scale every segment's power by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            segments: self.segments.iter().map(|&(t, p)| (t, p * factor)).collect(),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        profile_at(self, t)
    }

    /// Exact energy delivered over [a, b].
    pub fn energy(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut e = 0.0;
        for (i, &(t0, p)) in self.segments.iter().enumerate() {
            let t1 = self.segments.get(i + 1).map_or(f64::INFINITY, |s| s.0);
            let lo = t0.max(a);
            let hi = t1.min(b);
            if hi > lo {
                e += p * (hi - lo);
            }
        }
        e
    }

    /// Times in (a, b) where the power changes.
    pub fn breaks_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.segments
            .iter()
            .map(|s| s.0)
            .filter(move |&t| t > a && t < b)
    }
}

pub fn profile_at(profile: &PowerProfile, t: f64) -> f64 {
    let idx = profile.segments.partition_point(|s| s.0 <= t);
    if idx == 0 {
        0.0
    } else {
        profile.segments[idx - 1].1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn heat_rate_examples() {
        let mut p = HeatGenParams {
            current: 0.0,
            resistance: 0.02,
            entropy_change: -20.0,
            electrons: 1.0,
        };
        assert_eq!(battery_heat_rate(&p, 300.0), 0.0);
        p.current = 3.0;
        p.entropy_change = 0.0;
        assert_relative_eq!(battery_heat_rate(&p, 300.0), 0.18, epsilon = 1e-15);
        p.entropy_change = -20.0;
        // hand computation: 0.18 + 18000/96485
        let expected = 0.18 + 18_000.0 / 96_485.0;
        assert_relative_eq!(battery_heat_rate(&p, 300.0), expected, epsilon = 1e-12);
        assert!((battery_heat_rate(&p, 300.0) - 0.3666).abs() < 1e-4);
    }

    #[test]
    fn heater_examples() {
        assert_eq!(heater_power(7.0, 3.0), 21.0);
        assert_eq!(heater_power(0.0, 3.0), 0.0);
        assert_relative_eq!(heater_power(10.0, 4.25), 42.5);
    }

    #[test]
    fn radiation_near_sixty_degrees() {
        assert_eq!(radiative_coefficient(0.0, 333.0), 0.0);
        let h = radiative_coefficient(0.9, 333.0);
        assert!((h - 7.5).abs() < 0.1, "{h}");
        assert!(radiative_coefficient(0.9, 340.0) > h);
    }

    #[test]
    fn profile_lookup_is_right_open() {
        let p = PowerProfile::new(vec![(0.0, 21.0), (3600.0, 0.0)]).unwrap();
        assert_eq!(profile_at(&p, 1800.0), 21.0);
        assert_eq!(profile_at(&p, 3600.0), 0.0);
        assert_eq!(profile_at(&p, 3599.999), 21.0);
        assert_eq!(profile_at(&PowerProfile::default(), 10.0), 0.0);
        assert_eq!(p.energy(0.0, 7200.0), 21.0 * 3600.0);
    }

    #[test]
    fn profile_validation_and_json() {
        assert!(PowerProfile::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(PowerProfile::new(vec![(0.0, -1.0)]).is_err());
        let p: PowerProfile = serde_json::from_str("[[0, 21], [3600, 0]]").unwrap();
        assert_eq!(p.segments().len(), 2);
        assert!(serde_json::from_str::<PowerProfile>("[[10, 1], [5, 1]]").is_err());
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[0.0,21.0],[3600.0,0.0]]");
    }
}
