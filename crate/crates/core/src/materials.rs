//! Thermophysical property records and the enthalpy–temperature machinery
//! used by the phase-change solver.
//!
//! Every material owns a piecewise-linear enthalpy curve anchored at
//! [`T_REF`] (h = 0). Outside the solidus–liquidus window the slope is the
//! specific heat; inside it the latent heat is released linearly, so the
//! curve is strictly increasing and can be inverted exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Enthalpy anchor temperature (°C) shared by all materials.
pub const T_REF: f64 = 25.0;

/// Temperature domain (°C) over which enthalpy curves are defined.
pub const CURVE_T_MIN: f64 = -50.0;
pub const CURVE_T_MAX: f64 = 400.0;

/// Default ratio of liquid to solid conductivity for the nano-carbon CPCM.
/// The measured 16.6 W/(m K) is a solid-state value; the liquid value is a
/// tunable, not a measurement.
pub const CPCM_LIQUID_CONDUCTIVITY_RATIO: f64 = 0.5;

/// Default CPCM specific heat, midpoint of the reported 2000–2900 J/(kg K).
pub const CPCM_CP: f64 = 2450.0;

pub const CPCM: &str = "CPCM";
pub const PARAFFIN: &str = "paraffin";
pub const WATER: &str = "water";
pub const ALUMINUM_6101: &str = "aluminum-6101";
pub const CFRN: &str = "CFRN";
pub const POLYIMIDE: &str = "polyimide";
pub const AIR: &str = "air";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialProps {
    pub name: String,
    /// W/(m K)
    pub k_solid: f64,
    /// W/(m K)
    pub k_liquid: f64,
    /// kg/m³
    pub rho_solid: f64,
    /// kg/m³
    pub rho_liquid: f64,
    /// J/(kg K)
    pub cp: f64,
    /// J/kg
    pub latent: f64,
    /// °C
    pub t_solidus: f64,
    /// °C
    pub t_liquidus: f64,
    /// Dynamic viscosity in Pa s, only meaningful for coolants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<f64>,
}

impl MaterialProps {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        k_solid: f64,
        k_liquid: f64,
        rho_solid: f64,
        rho_liquid: f64,
        cp: f64,
        latent: f64,
        t_solidus: f64,
        t_liquidus: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            k_solid,
            k_liquid,
            rho_solid,
            rho_liquid,
            cp,
            latent,
            t_solidus,
            t_liquidus,
            viscosity: None,
        }
    }

    /// Single-phase material with constant properties.
    fn inert(name: &str, k: f64, rho: f64, cp: f64) -> Self {
        Self::new(name, k, k, rho, rho, cp, 0.0, T_REF, T_REF)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidMaterial {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let all_finite = [
            self.k_solid,
            self.k_liquid,
            self.rho_solid,
            self.rho_liquid,
            self.cp,
            self.latent,
            self.t_solidus,
            self.t_liquidus,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite property");
        }
        if self.k_solid <= 0.0 || self.k_liquid <= 0.0 {
            return bad("conductivity must be positive");
        }
        if self.rho_solid <= 0.0 || self.rho_liquid <= 0.0 {
            return bad("density must be positive");
        }
        if self.cp <= 0.0 {
            return bad("specific heat must be positive");
        }
        if self.latent < 0.0 {
            return bad("latent heat must be non-negative");
        }
        if self.t_solidus > self.t_liquidus {
            return bad("solidus above liquidus");
        }
        if self.latent == 0.0 && self.t_solidus != self.t_liquidus {
            return bad("mushy zone without latent heat");
        }
        if self.latent > 0.0
            && (self.t_solidus <= CURVE_T_MIN || self.t_liquidus >= CURVE_T_MAX)
        {
            return bad("phase-change window outside the curve domain");
        }
        Ok(())
    }

    pub fn is_phase_change(&self) -> bool {
        self.latent > 0.0
    }

    /// Liquid fraction without the phase-change precondition; zero for
    /// inert materials.
    pub fn melt_fraction(&self, t: f64) -> f64 {
        if !self.is_phase_change() {
            return 0.0;
        }
        if self.t_liquidus == self.t_solidus {
            return if t >= self.t_liquidus { 1.0 } else { 0.0 };
        }
        ((t - self.t_solidus) / (self.t_liquidus - self.t_solidus)).clamp(0.0, 1.0)
    }

    /// Liquid-fraction-weighted conductivity.
    pub fn conductivity(&self, t: f64) -> f64 {
        let f = self.melt_fraction(t);
        self.k_solid * (1.0 - f) + self.k_liquid * f
    }
}

/// Piecewise-linear, strictly increasing map between temperature (°C) and
/// enthalpy. Material curves are specific (J/kg); curves produced by
/// [`EnthalpyCurve::combine`] are extensive (J).
#[derive(Debug, Clone, PartialEq)]
pub struct EnthalpyCurve {
    pub material: String,
    pub t_ref: f64,
    points: Vec<(f64, f64)>,
}

impl EnthalpyCurve {
    pub fn for_material(m: &MaterialProps) -> Self {
        let h = |t: f64| m.cp * (t - T_REF) + m.latent * (m.melt_fraction(t) - m.melt_fraction(T_REF));
        let mut temps = vec![CURVE_T_MIN, CURVE_T_MAX];
        if m.is_phase_change() {
            temps.push(m.t_solidus);
            temps.push(m.t_liquidus);
        }
        temps.sort_by(f64::total_cmp);
        temps.dedup();
        let mut points: Vec<(f64, f64)> = temps.into_iter().map(|t| (t, h(t))).collect();
        // An isothermal transition becomes a vanishingly thin mushy zone so
        // the curve stays a function of temperature.
        if m.is_phase_change() && m.t_solidus == m.t_liquidus {
            let t = m.t_solidus;
            let eps = 1e-6;
            points.retain(|p| p.0 != t);
            points.push((t - eps, m.cp * (t - eps - T_REF) - m.latent * m.melt_fraction(T_REF)));
            points.push((t + eps, m.cp * (t + eps - T_REF) + m.latent * (1.0 - m.melt_fraction(T_REF))));
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Self {
            material: m.name.clone(),
            t_ref: T_REF,
            points,
        }
    }

    /// Sum of `mass × curve` over the parts; the result is in joules.
    pub fn combine(label: &str, parts: &[(&EnthalpyCurve, f64)]) -> Self {
        let mut temps: Vec<f64> = parts
            .iter()
            .flat_map(|(c, _)| c.points.iter().map(|p| p.0))
            .collect();
        temps.sort_by(f64::total_cmp);
        temps.dedup();
        let points = temps
            .into_iter()
            .map(|t| {
                let h = parts.iter().map(|(c, m)| m * c.eval(t)).sum();
                (t, h)
            })
            .collect();
        Self {
            material: label.to_string(),
            t_ref: T_REF,
            points,
        }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn t_domain(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    pub fn h_range(&self) -> (f64, f64) {
        (self.points[0].1, self.points[self.points.len() - 1].1)
    }

    pub fn enthalpy(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.t_domain();
        if !(lo..=hi).contains(&t) {
            return Err(Error::Domain {
                material: self.material.clone(),
                value: t,
                lo,
                hi,
            });
        }
        Ok(self.eval(t))
    }

    pub fn temperature(&self, h: f64) -> Result<f64> {
        let (lo, hi) = self.h_range();
        if !(lo..=hi).contains(&h) {
            return Err(Error::Domain {
                material: self.material.clone(),
                value: h,
                lo,
                hi,
            });
        }
        Ok(self.invert(h))
    }

    /// Evaluate h(T), extending the end segments linearly outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        let i = segment_by(&self.points, t, |p| p.0);
        let (t0, h0) = self.points[i];
        let (t1, h1) = self.points[i + 1];
        h0 + (h1 - h0) * (t - t0) / (t1 - t0)
    }

    /// Evaluate T(h), extending the end segments linearly outside the range.
    pub fn invert(&self, h: f64) -> f64 {
        let i = segment_by(&self.points, h, |p| p.1);
        let (t0, h0) = self.points[i];
        let (t1, h1) = self.points[i + 1];
        t0 + (t1 - t0) * (h - h0) / (h1 - h0)
    }

    /// dh/dT of the segment containing enthalpy `h`.
    pub fn slope_at_enthalpy(&self, h: f64) -> f64 {
        let i = segment_by(&self.points, h, |p| p.1);
        let (t0, h0) = self.points[i];
        let (t1, h1) = self.points[i + 1];
        (h1 - h0) / (t1 - t0)
    }

    /// Largest segment slope; an upper bound on the apparent heat capacity.
    pub fn max_slope(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }
}

/// Index of the segment [i, i+1] that contains `x` along `key`.
fn segment_by(points: &[(f64, f64)], x: f64, key: impl Fn(&(f64, f64)) -> f64) -> usize {
    let n = points.len();
    if n <= 2 || x <= key(&points[1]) {
        return 0;
    }
    if x >= key(&points[n - 2]) {
        return n - 2;
    }
    // first index whose key exceeds x
    let upper = points.partition_point(|p| key(p) <= x);
    upper - 1
}

pub fn enthalpy_of(m: &MaterialProps, t: f64) -> Result<f64> {
    EnthalpyCurve::for_material(m).enthalpy(t)
}

pub fn temperature_of(m: &MaterialProps, h: f64) -> Result<f64> {
    EnthalpyCurve::for_material(m).temperature(h)
}

pub fn liquid_fraction(m: &MaterialProps, t: f64) -> Result<f64> {
    if !m.is_phase_change() {
        return Err(Error::NotPhaseChange(m.name.clone()));
    }
    Ok(m.melt_fraction(t))
}

pub fn conductivity_of(m: &MaterialProps, t: f64) -> f64 {
    m.conductivity(t)
}

/// Partial override of a material record; absent fields keep their value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialOverride {
    k_solid: Option<f64>,
    k_liquid: Option<f64>,
    rho_solid: Option<f64>,
    rho_liquid: Option<f64>,
    cp: Option<f64>,
    latent: Option<f64>,
    t_solidus: Option<f64>,
    t_liquidus: Option<f64>,
    viscosity: Option<f64>,
}

/// Named material records. Immutable once handed to a network builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRegistry {
    materials: BTreeMap<String, MaterialProps>,
}

impl Default for MaterialRegistry {
    fn default() -> Self {
        builtin_materials()
    }
}

impl MaterialRegistry {
    pub fn get(&self, name: &str) -> Result<&MaterialProps> {
        self.materials
            .get(name)
            .ok_or_else(|| Error::UnknownMaterial(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.materials.keys().map(String::as_str)
    }

    pub fn insert(&mut self, m: MaterialProps) -> Result<()> {
        m.validate()?;
        self.materials.insert(m.name.clone(), m);
        Ok(())
    }

    /// Apply overrides from a JSON object keyed by material name. Known
    /// materials accept partial records; new names need every field.
    pub fn apply_overrides(&mut self, overrides: &serde_json::Value) -> Result<()> {
        let obj = overrides
            .as_object()
            .ok_or_else(|| Error::Invalid("materials overrides must be a JSON object".into()))?;
        for (name, value) in obj {
            let updated = match self.materials.get(name) {
                Some(base) => {
                    let o: MaterialOverride = serde_json::from_value(value.clone())?;
                    let mut m = base.clone();
                    macro_rules! set {
                        ($($f:ident),*) => { $( if let Some(v) = o.$f { m.$f = v; } )* };
                    }
                    set!(k_solid, k_liquid, rho_solid, rho_liquid, cp, latent, t_solidus, t_liquidus);
                    if o.viscosity.is_some() {
                        m.viscosity = o.viscosity;
                    }
                    m
                }
                None => {
                    let mut v = value.clone();
                    if let Some(map) = v.as_object_mut() {
                        map.entry("name").or_insert_with(|| name.clone().into());
                    }
                    serde_json::from_value::<MaterialProps>(v)?
                }
            };
            if updated.name != *name {
                return Err(Error::InvalidMaterial {
                    name: name.clone(),
                    reason: format!("record names itself {}", updated.name),
                });
            }
            self.insert(updated)?;
        }
        Ok(())
    }

    pub fn apply_overrides_str(&mut self, json: &str) -> Result<()> {
        let v: serde_json::Value = serde_json::from_str(json)?;
        self.apply_overrides(&v)
    }
}

/// Built-in property set.
///
/// Handbook values: aluminium 6101-T6 conducts 218 W/(m K) (ASM handbook
/// and the Aluminum Association electrical-conductor tables agree to 1%);
/// water at 25 °C uses k = 0.6 W/(m K), ρ = 1000 kg/m³, cp = 4186 J/(kg K),
/// μ = 0.89 mPa s. The CFRN conductivity is a through-thickness estimate for
/// chopped carbon-fibre nylon.
pub fn builtin_materials() -> MaterialRegistry {
    let cpcm = MaterialProps::new(
        CPCM,
        16.6,
        16.6 * CPCM_LIQUID_CONDUCTIVITY_RATIO,
        861.0,
        778.0,
        CPCM_CP,
        173_400.0,
        55.0,
        57.0,
    );
    let paraffin = MaterialProps::new(PARAFFIN, 0.25, 0.15, 861.0, 778.0, 2450.0, 200_000.0, 55.0, 57.0);
    let mut water = MaterialProps::inert(WATER, 0.6, 1000.0, 4186.0);
    water.viscosity = Some(0.89e-3);
    let mut air = MaterialProps::inert(AIR, 0.026, 1.2, 1005.0);
    air.viscosity = Some(1.8e-5);
    let list = vec![
        cpcm,
        paraffin,
        water,
        air,
        MaterialProps::inert(ALUMINUM_6101, 218.0, 2690.0, 895.0),
        MaterialProps::inert(CFRN, 0.25, 1200.0, 1500.0),
        MaterialProps::inert(POLYIMIDE, 0.12, 1420.0, 1090.0),
    ];
    MaterialRegistry {
        materials: list.into_iter().map(|m| (m.name.clone(), m)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reg() -> MaterialRegistry {
        builtin_materials()
    }

    #[test]
    fn cpcm_record() {
        let r = reg();
        let c = r.get(CPCM).unwrap();
        assert_eq!(c.latent, 173_400.0);
        assert_eq!(c.rho_solid, 861.0);
        assert_eq!(c.rho_liquid, 778.0);
        assert_eq!(c.k_solid, 16.6);
        assert_eq!((c.t_solidus, c.t_liquidus), (55.0, 57.0));
        for name in [CPCM, PARAFFIN, WATER, ALUMINUM_6101, CFRN, POLYIMIDE] {
            r.get(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn aluminum_handbook_conductivity() {
        // 6101-T6: 218 W/(m K); the two references quoted above span 216–222.
        let k = reg().get(ALUMINUM_6101).unwrap().k_solid;
        assert!((216.0..=222.0).contains(&k));
        assert_eq!(k, 218.0);
    }

    #[test]
    fn enthalpy_anchor_and_window() {
        let r = reg();
        let c = r.get(CPCM).unwrap();
        assert_eq!(enthalpy_of(c, 25.0).unwrap(), 0.0);
        let dh = enthalpy_of(c, 57.0).unwrap() - enthalpy_of(c, 55.0).unwrap();
        assert_eq!(dh, 173_400.0 + 2.0 * c.cp);
        let w = r.get(WATER).unwrap();
        let dh = enthalpy_of(w, 30.0).unwrap() - enthalpy_of(w, 20.0).unwrap();
        assert_relative_eq!(dh, 10.0 * w.cp, max_relative = 1e-12);
    }

    #[test]
    fn enthalpy_outside_domain_is_error() {
        let r = reg();
        let c = r.get(CPCM).unwrap();
        assert!(matches!(enthalpy_of(c, 1000.0), Err(Error::Domain { .. })));
        assert!(matches!(temperature_of(c, 1e12), Err(Error::Domain { .. })));
    }

    #[test]
    fn mushy_midpoint_and_slope_above_liquidus() {
        let r = reg();
        let c = r.get(CPCM).unwrap();
        let h55 = enthalpy_of(c, 55.0).unwrap();
        // linear mushy zone: half the latent (plus half the sensible part) lands at 56
        let h_mid = h55 + 0.5 * (c.latent + 2.0 * c.cp);
        assert_relative_eq!(temperature_of(c, h_mid).unwrap(), 56.0, epsilon = 1e-12);
        let h57 = enthalpy_of(c, 57.0).unwrap();
        let dh = 100.0;
        let t = temperature_of(c, h57 + dh).unwrap();
        assert!(t > 57.0);
        assert_relative_eq!((t - 57.0) / dh, 1.0 / c.cp, max_relative = 1e-9);
    }

    #[test]
    fn liquid_fraction_and_conductivity() {
        let r = reg();
        let c = r.get(CPCM).unwrap();
        assert_eq!(liquid_fraction(c, 55.0).unwrap(), 0.0);
        assert_eq!(liquid_fraction(c, 57.0).unwrap(), 1.0);
        assert_eq!(liquid_fraction(c, 56.0).unwrap(), 0.5);
        assert!(matches!(
            liquid_fraction(r.get(WATER).unwrap(), 50.0),
            Err(Error::NotPhaseChange(_))
        ));
        assert_eq!(conductivity_of(c, 40.0), 16.6);
        assert_relative_eq!(conductivity_of(c, 60.0), 8.3, epsilon = 1e-12);
        let al = r.get(ALUMINUM_6101).unwrap();
        for t in [0.0, 55.0, 56.0, 150.0] {
            assert_eq!(conductivity_of(al, t), al.k_solid);
        }
    }

    #[test]
    fn combined_curve_is_mass_weighted_sum() {
        let r = reg();
        let c = EnthalpyCurve::for_material(r.get(CPCM).unwrap());
        let f = EnthalpyCurve::for_material(r.get(CFRN).unwrap());
        let both = EnthalpyCurve::combine("mix", &[(&c, 0.01), (&f, 0.002)]);
        for t in [-10.0, 25.0, 55.5, 56.0, 80.0] {
            assert_relative_eq!(
                both.eval(t),
                0.01 * c.eval(t) + 0.002 * f.eval(t),
                max_relative = 1e-12,
                epsilon = 1e-9
            );
            assert_relative_eq!(both.invert(both.eval(t)), t, epsilon = 1e-9);
        }
    }

    #[test]
    fn overrides_apply_and_reject_unknown_keys() {
        let mut r = reg();
        r.apply_overrides_str(r#"{"CPCM": {"cp": 2000.0, "k_liquid": 4.0}}"#).unwrap();
        assert_eq!(r.get(CPCM).unwrap().cp, 2000.0);
        assert_eq!(r.get(CPCM).unwrap().k_liquid, 4.0);
        assert!(r.apply_overrides_str(r#"{"CPCM": {"colour": 1}}"#).is_err());
        // new material needs a full record
        assert!(r.apply_overrides_str(r#"{"copper": {"k_solid": 400.0}}"#).is_err());
        r.apply_overrides_str(
            r#"{"copper": {"k_solid": 400, "k_liquid": 400, "rho_solid": 8960, "rho_liquid": 8960,
                "cp": 385, "latent": 0, "t_solidus": 25, "t_liquidus": 25}}"#,
        )
        .unwrap();
        assert_eq!(r.get("copper").unwrap().k_solid, 400.0);
        // invariants are enforced on the merged record
        assert!(r.apply_overrides_str(r#"{"CPCM": {"t_solidus": 60.0}}"#).is_err());
    }

    #[test]
    fn isothermal_phase_change_stays_invertible() {
        let mut m = reg().get(CPCM).unwrap().clone();
        m.t_solidus = 56.0;
        m.t_liquidus = 56.0;
        let curve = EnthalpyCurve::for_material(&m);
        let h_lo = curve.eval(55.9);
        let h_hi = curve.eval(56.1);
        assert!(h_hi - h_lo > m.latent);
        assert_relative_eq!(curve.invert(curve.eval(70.0)), 70.0, epsilon = 1e-9);
    }
}
