//! The seven bench configurations, their heating/cooling protocol, and
//! calibration of the ambient film coefficient against anchor points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_network, probe_sites, ChannelPath, Discretization, HexLattice, Layer, LayerRole, LayerStack,
    LatticeVariant, ProbeSite, ThermalNetwork,
};
use crate::loads::{heater_power, PowerProfile};
use crate::materials::{builtin_materials, MaterialRegistry, AIR, ALUMINUM_6101, CFRN, CPCM, POLYIMIDE, WATER};
use crate::solver::{run, BoundaryCondition, FlowSchedule, RunSpec, SimResult, SolverSettings};

pub const T_AMB: f64 = 20.0;
/// Bench heater operating point: 7 V, 3 A.
pub const BENCH_VOLTS: f64 = 7.0;
pub const BENCH_AMPS: f64 = 3.0;
/// Bench anchor surface temperature, °C.
pub const BENCH_SURFACE_T: f64 = 76.0;
/// Reference-plate anchor, °C.
pub const REFERENCE_PEAK_T: f64 = 89.0;
pub const HEAT_S: f64 = 3600.0;
pub const COOL_S: f64 = 3600.0;

/// Heater and plate footprint, m.
pub const FOOTPRINT_LENGTH: f64 = 0.1524;
pub const FOOTPRINT_WIDTH: f64 = 0.0508;
pub const HEATER_THICKNESS: f64 = 0.00178;
pub const PLATE_THICKNESS: f64 = 0.006;
/// Pasted interfaces, m² K/W.
pub const PASTE_RESISTANCE: f64 = 2.5e-5;
/// Pressed dry interfaces, m² K/W.
pub const DRY_RESISTANCE: f64 = 1e-4;

/// Geometry the bench description leaves open. Every value here is a model
/// choice, not a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleDefaults {
    pub floor_thickness: f64,
    pub lattice_depth: f64,
    pub top_panel_thickness: f64,
    pub wall_thickness: f64,
    pub regular_cells: usize,
    pub intensive_cells: usize,
    pub channel_width: f64,
    pub channel_height: f64,
    pub channel_length: f64,
    pub channel_legs: usize,
    pub wall_separation: f64,
    /// Ambient film coefficient on every exposed face, W/(m² K).
    pub h_conv: f64,
}

pub const MODULE: ModuleDefaults = ModuleDefaults {
    floor_thickness: 0.001,
    lattice_depth: 0.012,
    top_panel_thickness: 0.0015,
    wall_thickness: 0.0035,
    regular_cells: 7,
    intensive_cells: 19,
    channel_width: 0.003,
    channel_height: 0.003,
    channel_length: 0.4,
    channel_legs: 6,
    wall_separation: 0.002,
    h_conv: 15.2959,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub stack: LayerStack,
    #[serde(default)]
    pub lattice: Option<HexLattice>,
    #[serde(default)]
    pub channel: Option<ChannelPath>,
    /// Tiles per hexagonal cell.
    #[serde(default = "one")]
    pub resolution: usize,
    /// Coolant segments; 0 picks two per tile.
    #[serde(default)]
    pub n_segments: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    /// `[[t_start_s, ml_per_min], ...]`
    pub flow: FlowSchedule,
    #[serde(default = "t_amb")]
    pub inlet_t: f64,
    #[serde(default = "water")]
    pub fluid: String,
}

fn t_amb() -> f64 {
    T_AMB
}
fn water() -> String {
    WATER.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub heat_s: f64,
    pub cool_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub cpcm_present: bool,
    #[serde(default)]
    pub sandwich: bool,
    pub geometry: Geometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<serde_json::Value>,
    #[serde(rename = "loop")]
    pub coolant: LoopSpec,
    pub profile: PowerProfile,
    pub boundary: BoundaryCondition,
    pub protocol: Protocol,
    #[serde(default)]
    pub solver: SolverSettings,
    /// label → placement
    pub probes: std::collections::BTreeMap<String, ProbeSite>,
}

/// Heating profile plus flow schedule for a heat-then-cool run.
pub fn protocol(heat_s: f64, cool_s: f64, power: f64, flow: FlowSchedule) -> Result<(PowerProfile, FlowSchedule)> {
    if !(heat_s > 0.0) || !(cool_s >= 0.0) {
        return Err(Error::Invalid("heating time must be positive and cooling time non-negative".into()));
    }
    let mut seg = vec![(0.0, power)];
    if cool_s > 0.0 {
        seg.push((heat_s, 0.0));
    }
    Ok((PowerProfile::new(seg)?, flow))
}

fn layer(role: LayerRole, material: &str, thickness: f64) -> Layer {
    Layer::new(role, material, thickness, FOOTPRINT_WIDTH, FOOTPRINT_LENGTH)
}

/// Share of the footprint left for cavities when `n_cells` hexagons tile it
/// with shared walls of thickness `wall`.
pub fn cavity_fraction(n_cells: usize, wall: f64) -> f64 {
    let a = FOOTPRINT_WIDTH * FOOTPRINT_LENGTH / n_cells as f64;
    let side = (a / (1.5 * 3f64.sqrt())).sqrt();
    (1.0 - 3.0 * side * wall / a).max(0.0)
}

fn lattice(d: &ModuleDefaults, variant: LatticeVariant, fill: &str) -> HexLattice {
    let n_cells = match variant {
        LatticeVariant::Regular => d.regular_cells,
        LatticeVariant::Intensive => d.intensive_cells,
    };
    HexLattice {
        variant,
        n_cells,
        depth: d.lattice_depth,
        wall_thickness: d.wall_thickness,
        cpcm_volume: cavity_fraction(n_cells, d.wall_thickness) * FOOTPRINT_WIDTH * FOOTPRINT_LENGTH * d.lattice_depth,
        fill: fill.to_string(),
    }
}

fn channel(d: &ModuleDefaults) -> ChannelPath {
    ChannelPath {
        width: d.channel_width,
        height: d.channel_height,
        segments: vec![d.channel_length / d.channel_legs as f64; d.channel_legs],
        wall_separation: d.wall_separation,
    }
}

#[derive(Clone, Copy)]
struct Build {
    variant: LatticeVariant,
    cpcm: bool,
    top_panel: bool,
    top_plate: bool,
    top_heater: bool,
}

fn module(d: &ModuleDefaults, b: Build) -> Geometry {
    let fill = if b.cpcm { CPCM } else { AIR };
    let mut layers = vec![
        layer(LayerRole::CellSimulator, POLYIMIDE, HEATER_THICKNESS),
        layer(LayerRole::AlPlate, ALUMINUM_6101, PLATE_THICKNESS),
        layer(LayerRole::CfrnShell, CFRN, d.floor_thickness),
        layer(LayerRole::CpcmLattice, CFRN, d.lattice_depth),
    ];
    let mut interfaces = vec![0.0, PASTE_RESISTANCE, 0.0];
    if b.top_panel {
        layers.push(layer(LayerRole::TopPanel, CFRN, d.top_panel_thickness));
        interfaces.push(0.0);
    }
    if b.top_plate {
        layers.push(layer(LayerRole::AlPlate, ALUMINUM_6101, PLATE_THICKNESS));
        interfaces.push(PASTE_RESISTANCE);
    }
    if b.top_heater {
        layers.push(layer(LayerRole::CellSimulator, POLYIMIDE, HEATER_THICKNESS));
        interfaces.push(0.0);
    }
    Geometry {
        stack: LayerStack { layers, interfaces },
        lattice: Some(lattice(d, b.variant, fill)),
        channel: Some(channel(d)),
        resolution: 1,
        n_segments: 0,
    }
}

fn reference_plate() -> Geometry {
    Geometry {
        stack: LayerStack {
            layers: vec![
                layer(LayerRole::CellSimulator, POLYIMIDE, HEATER_THICKNESS),
                layer(LayerRole::AlPlate, ALUMINUM_6101, PLATE_THICKNESS),
            ],
            interfaces: vec![0.0],
        },
        lattice: None,
        channel: None,
        resolution: 1,
        n_segments: 0,
    }
}

fn scenario(id: &str, description: &str, geometry: Geometry, cpcm: bool, sandwich: bool, flow: Option<f64>, d: &ModuleDefaults) -> Scenario {
    // `None` leaves the channels dry.
    let fluid = if flow.is_some() { WATER } else { AIR };
    let (profile, flow) = protocol(
        HEAT_S,
        COOL_S,
        heater_power(BENCH_VOLTS, BENCH_AMPS),
        FlowSchedule::constant(flow.unwrap_or(0.0)),
    )
    .expect("static protocol is valid");
    Scenario {
        id: id.to_string(),
        description: description.to_string(),
        cpcm_present: cpcm,
        sandwich,
        geometry,
        materials: None,
        coolant: LoopSpec {
            flow,
            inlet_t: T_AMB,
            fluid: fluid.to_string(),
        },
        profile,
        boundary: BoundaryCondition {
            h_conv: d.h_conv,
            t_amb: T_AMB,
            h_rad: 0.0,
        },
        protocol: Protocol {
            heat_s: HEAT_S,
            cool_s: COOL_S,
        },
        solver: SolverSettings::default(),
        probes: probe_sites(id).expect("registry ids are known").into_iter().collect(),
    }
}

/// All seven configurations with the given module defaults.
pub fn registry_with(d: &ModuleDefaults) -> Vec<Scenario> {
    use LatticeVariant::*;
    let m = |variant, cpcm, top_panel, top_plate, top_heater| {
        module(
            d,
            Build {
                variant,
                cpcm,
                top_panel,
                top_plate,
                top_heater,
            },
        )
    };
    vec![
        scenario("S1", "Reference: bare aluminium cell simulator", reference_plate(), false, false, None, d),
        scenario("S2", "Simulator + CPCM hexagon module, open top", m(Regular, true, false, false, false), true, false, None, d),
        scenario("S3", "S2 + sealed CFRN top panel", m(Regular, true, true, false, false), true, false, None, d),
        scenario("S4", "S3 + pasted aluminium top plate, static water", m(Regular, true, true, true, false), true, false, Some(0.0), d),
        scenario("S5", "Simulator + hexagon module without CPCM", m(Regular, false, true, false, false), false, false, None, d),
        scenario("S6", "Small-hexagon module under flow", m(Intensive, true, true, false, false), true, false, Some(8.0), d),
        scenario("S7", "S4 with a second heater on the top plate", m(Regular, true, true, true, true), true, true, Some(8.0), d),
    ]
}

pub fn registry() -> Vec<Scenario> {
    registry_with(&MODULE)
}

pub fn get(id: &str) -> Result<Scenario> {
    registry()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Invalid(format!("unknown scenario {id}")))
}

/// Flow grids used by the sweeps.
pub const FLOW_GRID: [f64; 6] = [0.0, 2.0, 8.0, 12.0, 16.0, 24.0];
pub const SANDWICH_FLOWS: [f64; 5] = [0.0, 2.0, 8.0, 12.0, 16.0];

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn materials(&self) -> Result<MaterialRegistry> {
        let mut reg = builtin_materials();
        if let Some(o) = &self.materials {
            reg.apply_overrides(o)?;
        }
        Ok(reg)
    }

    pub fn duration(&self) -> f64 {
        self.protocol.heat_s + self.protocol.cool_s
    }

    /// Structural checks that do not need a network.
    pub fn validate(&self) -> Result<()> {
        self.geometry.stack.validate()?;
        self.boundary.validate()?;
        self.solver.validate()?;
        if !(self.protocol.heat_s > 0.0 && self.protocol.cool_s >= 0.0) {
            return Err(Error::Invalid("protocol durations invalid".into()));
        }
        if let Some(l) = &self.geometry.lattice {
            l.validate()?;
            let has_cpcm = self.materials()?.get(&l.fill)?.is_phase_change();
            if has_cpcm != self.cpcm_present {
                return Err(Error::Invalid(format!(
                    "cpcm_present = {} but the lattice is filled with {}",
                    self.cpcm_present, l.fill
                )));
            }
        } else if self.cpcm_present {
            return Err(Error::Invalid("cpcm_present without a lattice".into()));
        }
        let heaters = self.geometry.stack.layers.iter().filter(|l| l.is_heated()).count();
        if self.sandwich && heaters < 2 {
            return Err(Error::Invalid("sandwich scenario needs two heated layers".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<(ThermalNetwork, RunSpec)> {
        self.validate()?;
        let reg = self.materials()?;
        let g = &self.geometry;
        let mut net = build_network(
            &g.stack,
            g.lattice.as_ref(),
            g.channel.as_ref(),
            &reg,
            Discretization {
                resolution: g.resolution,
                n_segments: g.n_segments,
            },
        )?;
        let sites: Vec<(String, ProbeSite)> = self.probes.iter().map(|(k, v)| (k.clone(), *v)).collect();
        net.bind_probes(&sites)?;
        let fluid = if g.channel.is_some() {
            Some(reg.get(&self.coolant.fluid)?.clone())
        } else {
            None
        };
        let spec = RunSpec {
            boundary: self.boundary,
            power: self.profile.clone(),
            flow: self.coolant.flow.clone(),
            inlet_t: self.coolant.inlet_t,
            fluid,
            initial_t: self.boundary.t_amb,
            duration: self.duration(),
            heat_end: self.protocol.heat_s,
            settings: self.solver,
        };
        Ok((net, spec))
    }

    pub fn simulate(&self) -> Result<SimResult> {
        let (net, spec) = self.build()?;
        run(&net, &spec)
    }

    /// Same scenario with water at a constant flow rate.
    pub fn with_flow(&self, flow: f64) -> Self {
        let mut s = self.clone();
        s.coolant.flow = FlowSchedule::constant(flow);
        s.coolant.fluid = WATER.to_string();
        s
    }

    /// Same scenario with dry channels (air instead of water, no flow).
    pub fn dry(&self) -> Self {
        let mut s = self.with_flow(0.0);
        s.coolant.fluid = AIR.to_string();
        s
    }

    pub fn heating_only(&self) -> Self {
        let mut s = self.clone();
        s.protocol.cool_s = 0.0;
        s.profile = PowerProfile::constant(self.profile.at(0.0));
        s
    }

    /// Swap the lattice for one with `n_cells` hexagons, refilling the
    /// cavities that the new walls leave.
    pub fn with_lattice_variant(&self, variant: LatticeVariant, n_cells: usize) -> Self {
        let mut s = self.clone();
        if let Some(l) = s.geometry.lattice.as_mut() {
            let envelope = FOOTPRINT_WIDTH * FOOTPRINT_LENGTH * l.depth;
            l.variant = variant;
            l.n_cells = n_cells;
            l.cpcm_volume = cavity_fraction(n_cells, l.wall_thickness) * envelope;
        }
        s
    }

    /// Apply a named sweep parameter.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match param {
            "flow_rate" | "flow" => {
                if !(value >= 0.0) {
                    return Err(Error::Invalid("flow rate must be non-negative".into()));
                }
                s = s.with_flow(value);
            }
            "n_cells" => {
                if s.geometry.lattice.is_none() {
                    return Err(Error::Invalid("scenario has no lattice".into()));
                }
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Invalid("n_cells must be a positive integer".into()));
                }
                let n = value as usize;
                let variant = if n > MODULE.regular_cells {
                    LatticeVariant::Intensive
                } else {
                    LatticeVariant::Regular
                };
                s = s.with_lattice_variant(variant, n);
            }
            "contact_resistance" => {
                if !(value >= 0.0) {
                    return Err(Error::Invalid("contact resistance must be non-negative".into()));
                }
                for r in s.geometry.stack.interfaces.iter_mut() {
                    if *r > 0.0 {
                        *r = value;
                    }
                }
            }
            "power" => {
                if !(value >= 0.0) {
                    return Err(Error::Invalid("power must be non-negative".into()));
                }
                let (p, _) = protocol(self.protocol.heat_s, self.protocol.cool_s, value, FlowSchedule::default())?;
                s.profile = p;
            }
            other => return Err(Error::Invalid(format!("unknown sweep parameter {other}"))),
        }
        Ok(s)
    }

    /// Exposed area of the built network, m².
    pub fn exposed_area(&self) -> Result<f64> {
        let (net, _) = self.build()?;
        Ok(net.boundaries.iter().map(|b| b.area).sum())
    }
}

/// Steady-state inversion hA = P / (T_surface − T_amb).
pub fn calibrate_ambient(power: f64, t_surface: f64, t_amb: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::Calibration("power must be positive".into()));
    }
    if !(t_surface > t_amb) {
        return Err(Error::Calibration("surface must be hotter than ambient".into()));
    }
    Ok(power / (t_surface - t_amb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// W/(m² K)
    pub h_conv: f64,
    /// h times the exposed area, W/K.
    pub ha_ambient: f64,
    /// Interface conductances A/R'' used in the stack, W/K.
    pub contact_conductances: Vec<f64>,
    pub target: f64,
    pub achieved: f64,
    /// achieved − target, °C
    pub anchor_residual: f64,
    pub iterations: usize,
}

/// Peak probe temperature during heating for a given film coefficient.
pub fn heating_peak(s: &Scenario, probe: &str, h_conv: f64) -> Result<f64> {
    let mut sc = s.heating_only();
    sc.boundary.h_conv = h_conv;
    let r = sc.simulate()?;
    let series = r.series(probe)?;
    Ok(series.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Secant search on the film coefficient so the reference plate's heating
/// peak matches `target_peak`.
pub fn calibrate_reference(s: &Scenario, target_peak: f64) -> Result<CalibrationResult> {
    let t_amb = s.boundary.t_amb;
    if !(target_peak > t_amb) {
        return Err(Error::Calibration(format!(
            "target {target_peak} °C is not above ambient {t_amb} °C"
        )));
    }
    let probe = "cell";
    // 1/(T − T_amb) is close to linear in h, which keeps the secant tame.
    let f = |h: f64| -> Result<f64> {
        let peak = heating_peak(s, probe, h)?;
        Ok(1.0 / (peak - t_amb) - 1.0 / (target_peak - t_amb))
    };
    let (mut a, mut b) = (1.0, 200.0);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::Calibration(format!(
            "target {target_peak} °C not bracketed by h in [{a}, {b}]"
        )));
    }
    let mut iterations = 0;
    let mut h = b;
    // Illinois variant of regula falsi: secant steps that keep a bracket.
    let mut side = 0;
    for _ in 0..60 {
        iterations += 1;
        h = (a * fb - b * fa) / (fb - fa);
        let fh = f(h)?;
        if fh.abs() < 1e-12 || (b - a).abs() < 1e-9 * h {
            break;
        }
        if fh.signum() == fb.signum() {
            b = h;
            fb = fh;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = h;
            fa = fh;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        let peak = 1.0 / (fh + 1.0 / (target_peak - t_amb)) + t_amb;
        if (peak - target_peak).abs() < 1e-6 {
            break;
        }
    }
    let achieved = heating_peak(s, probe, h)?;
    let mut sc = s.clone();
    sc.boundary.h_conv = h;
    let area = sc.exposed_area()?;
    let stack = &s.geometry.stack;
    let contact_conductances = stack
        .interfaces
        .iter()
        .filter(|r| **r > 0.0)
        .map(|r| stack.layers[0].area() / r)
        .collect();
    let residual = achieved - target_peak;
    if residual.abs() > 0.5 {
        return Err(Error::Calibration(format!("residual {residual:.3} °C exceeds 0.5 °C")));
    }
    Ok(CalibrationResult {
        h_conv: h,
        ha_ambient: h * area,
        contact_conductances,
        target: target_peak,
        achieved,
        anchor_residual: residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_structure() {
        let r = registry();
        assert_eq!(r.len(), 7);
        let ids: Vec<_> = r.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["S1", "S2", "S3", "S4", "S5", "S6", "S7"]);
        for s in &r {
            s.validate().unwrap();
        }
        let by = |id: &str| r.iter().find(|s| s.id == id).unwrap();
        assert!(!by("S5").cpcm_present);
        assert!(by("S5").geometry.lattice.is_some());
        assert_eq!(by("S6").geometry.lattice.as_ref().unwrap().variant, LatticeVariant::Intensive);
        assert_eq!(by("S1").coolant.flow.at(0.0), 0.0);
        assert!(by("S7").sandwich);
        assert!(by("S1").geometry.lattice.is_none());
        let roles = |id: &str| by(id).geometry.stack.layers.iter().map(|l| l.role).collect::<Vec<_>>();
        assert!(!roles("S2").contains(&LayerRole::TopPanel));
        assert!(roles("S3").contains(&LayerRole::TopPanel));
        assert_eq!(roles("S4").iter().filter(|r| **r == LayerRole::AlPlate).count(), 2);
    }

    #[test]
    fn ambient_inversion() {
        assert_eq!(calibrate_ambient(21.0, 76.0, 20.0).unwrap(), 0.375);
        assert_eq!(calibrate_ambient(5.0, 21.0, 20.0).unwrap(), 5.0);
        assert_eq!(calibrate_ambient(42.0, 76.0, 20.0).unwrap(), 0.75);
        assert!(calibrate_ambient(21.0, 20.0, 20.0).is_err());
    }

    #[test]
    fn protocol_shapes() {
        let (p, f) = protocol(3600.0, 3600.0, 21.0, FlowSchedule::constant(8.0)).unwrap();
        assert_eq!(p.segments().len(), 2);
        assert_eq!(f.at(5000.0), 8.0);
        let (p, _) = protocol(3600.0, 0.0, 21.0, FlowSchedule::default()).unwrap();
        assert_eq!(p.segments().len(), 1);
        let sched = FlowSchedule::new(vec![(0.0, 0.0), (3600.0, 8.0)]).unwrap();
        let (_, f) = protocol(3600.0, 3600.0, 21.0, sched).unwrap();
        assert_eq!(f.at(100.0), 0.0);
        assert_eq!(f.at(4000.0), 8.0);
        assert!(protocol(0.0, 10.0, 21.0, FlowSchedule::default()).is_err());
    }

    #[test]
    fn json_roundtrip_and_unknown_keys() {
        let s = get("S4").unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v["bogus"] = 1.into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn reference_calibration_rejects_ambient_target() {
        let s = get("S1").unwrap();
        assert!(matches!(calibrate_reference(&s, T_AMB), Err(Error::Calibration(_))));
    }
}
