//! Transient integration of a [`ThermalNetwork`].
//!
//! Each step is backward Euler on nodal enthalpy. The enthalpy–temperature
//! nonlinearity is resolved by a Newton iteration with lagged conductances:
//! every iterate solves a banded SPD system for temperature, and the new
//! enthalpy is rebuilt from the fluxes at that temperature, so the discrete
//! energy ledger closes to round-off whatever the iteration count.
//! The coolant is advanced by operator splitting; the solid sees the
//! step-averaged fluid temperature, iterated to consistency.

pub mod banded;
pub mod coolant;
pub mod lumped;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProbeTarget, ThermalNetwork};
use crate::loads::PowerProfile;
use crate::materials::MaterialProps;
use banded::BandMatrix;
pub use coolant::{
    advect_coolant, capacity_rate, channel_htc, film_coefficient, ml_per_min, reynolds, AdvectOutcome,
    CoolantLoop, SegmentCoupling,
};
pub use lumped::{lumped_at, lumped_simulate, steady_state_lumped, LumpedCellParams, LumpedSeries};

/// Flow rate schedule in ml/min, same piecewise-constant semantics as a
/// power profile.
pub type FlowSchedule = PowerProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryCondition {
    /// W/(m² K)
    pub h_conv: f64,
    /// °C
    pub t_amb: f64,
    /// Additive linearized radiation, W/(m² K).
    #[serde(default)]
    pub h_rad: f64,
}

impl BoundaryCondition {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_conv >= 0.0 && self.h_rad >= 0.0) || !self.t_amb.is_finite() {
            return Err(Error::Invalid("boundary coefficients must be non-negative".into()));
        }
        Ok(())
    }

    pub fn h_total(&self) -> f64 {
        self.h_conv + self.h_rad
    }
}

fn d_dt() -> f64 {
    1.0
}
fn d_out() -> f64 {
    5.0
}
fn d_tol() -> f64 {
    1e-6
}
fn d_iter() -> usize {
    50
}
fn d_fallback() -> usize {
    15
}
fn d_ctol() -> f64 {
    1e-9
}
fn d_citer() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// s
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Output sampling interval, s.
    #[serde(default = "d_out")]
    pub output_interval: f64,
    /// Relative tolerance on nodal enthalpy.
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    #[serde(default = "d_iter")]
    pub max_iterations: usize,
    /// Iteration after which oscillating nodes switch to a secant slope.
    #[serde(default = "d_fallback")]
    pub fallback_after: usize,
    /// Tolerance on the step-averaged fluid temperature, K.
    #[serde(default = "d_ctol")]
    pub coupling_tolerance: f64,
    #[serde(default = "d_citer")]
    pub max_coupling_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            output_interval: d_out(),
            tolerance: d_tol(),
            max_iterations: d_iter(),
            fallback_after: d_fallback(),
            coupling_tolerance: d_ctol(),
            max_coupling_iterations: d_citer(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.output_interval > 0.0 && self.tolerance > 0.0) {
            return Err(Error::Invalid("solver dt, output interval and tolerance must be positive".into()));
        }
        if self.max_iterations == 0 || self.max_coupling_iterations == 0 {
            return Err(Error::Invalid("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Per-node enthalpy (J, extensive) plus coolant segment temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub time: f64,
    pub enthalpy: Vec<f64>,
    pub temperature: Vec<f64>,
    pub fluid: Vec<f64>,
}

impl State {
    pub fn uniform(net: &ThermalNetwork, t: f64) -> Self {
        Self {
            time: 0.0,
            enthalpy: net.nodes.iter().map(|n| n.curve.eval(t)).collect(),
            temperature: vec![t; net.len()],
            fluid: vec![t; net.segments.len()],
        }
    }
}

/// Loads applied over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub boundary: BoundaryCondition,
    /// Mean power over the step for each source attachment, W.
    pub source_power: Vec<f64>,
    pub coupling: Vec<SegmentCoupling>,
    /// Coolant capacity rate, W/K.
    pub mdot_cp: f64,
    pub inlet_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub e_in: f64,
    pub e_ambient: f64,
    pub e_coolant: f64,
    /// Change in fluid sensible energy, J.
    pub e_fluid: f64,
    pub iterations: usize,
    pub coupling_iterations: usize,
    pub substeps: usize,
}

/// Reusable workspace for stepping one network.
pub struct Stepper<'a> {
    net: &'a ThermalNetwork,
    settings: SolverSettings,
    matrix: BandMatrix,
    g_amb_area: Vec<f64>,
    cap_floor: Vec<f64>,
}

/// Temperatures, enthalpies, coolant exchange and iteration count of a solid solve.
type SolidIterate = (Vec<f64>, Vec<f64>, Vec<f64>, usize);

impl<'a> Stepper<'a> {
    pub fn new(net: &'a ThermalNetwork, settings: SolverSettings) -> Self {
        let n = net.len();
        let mut g_amb_area = vec![0.0; n];
        for b in &net.boundaries {
            g_amb_area[b.node] += b.area;
        }
        Self {
            net,
            settings,
            matrix: BandMatrix::zeros(n, net.bandwidth),
            g_amb_area,
            cap_floor: net.nodes.iter().map(|n| n.capacitance).collect(),
        }
    }

    /// Fluxes F(T) into every node, W, with the given conductances.
    fn fluxes(&self, t: &[f64], g_edge: &[f64], inp: &StepInputs, g_cool: &[f64], q_cool: &[f64], out: &mut [f64]) {
        let net = self.net;
        let h = inp.boundary.h_total();
        for i in 0..net.len() {
            out[i] = -h * self.g_amb_area[i] * (t[i] - inp.boundary.t_amb) - g_cool[i] * t[i] + q_cool[i];
        }
        for (e, g) in net.edges.iter().zip(g_edge) {
            let q = g * (t[e.b] - t[e.a]);
            out[e.a] += q;
            out[e.b] -= q;
        }
        for (s, p) in net.sources.iter().zip(&inp.source_power) {
            for &(node, share) in &s.nodes {
                out[node] += p * share;
            }
        }
    }

    /// Newton iteration for the solid with fluid temperatures fixed at `tbar`.
    /// Returns the temperature solve of the last iterate and its enthalpy.
    fn solve_solid(
        &mut self,
        h_n: &[f64],
        h_start: &[f64],
        tbar: &[f64],
        inp: &StepInputs,
        dt: f64,
        time: f64,
    ) -> Result<SolidIterate> {
        let net = self.net;
        let n = net.len();
        let mut g_cool = vec![0.0; n];
        let mut q_cool = vec![0.0; n];
        for (seg, (c, tf)) in net.segments.iter().zip(inp.coupling.iter().zip(tbar)) {
            g_cool[seg.host] += c.g;
            q_cool[seg.host] += c.g * tf;
        }
        let h_amb = inp.boundary.h_total();
        let mut h_k = h_start.to_vec();
        let mut h_prev: Option<Vec<f64>> = None;
        let mut t_k = vec![0.0; n];
        let mut t_prev = vec![0.0; n];
        let mut slope = vec![0.0; n];
        let mut g_edge = vec![0.0; net.edges.len()];
        let mut flux = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for it in 1..=self.settings.max_iterations {
            for i in 0..n {
                let curve = &net.nodes[i].curve;
                t_k[i] = curve.invert(h_k[i]);
                slope[i] = curve.slope_at_enthalpy(h_k[i]);
            }
            if it > self.settings.fallback_after {
                if let Some(hp) = &h_prev {
                    for i in 0..n {
                        let dtemp = t_k[i] - t_prev[i];
                        if dtemp.abs() > 1e-12 {
                            let s = (h_k[i] - hp[i]) / dtemp;
                            if s > 0.0 {
                                slope[i] = s;
                            }
                        }
                    }
                }
            }
            for (g, e) in g_edge.iter_mut().zip(&net.edges) {
                *g = net.edge_conductance(e, &t_k);
            }
            self.matrix.clear();
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                let ga = h_amb * self.g_amb_area[i];
                self.matrix.add(i, i, slope[i] / dt + ga + g_cool[i]);
                rhs[i] = slope[i] / dt * t_k[i] - (h_k[i] - h_n[i]) / dt + ga * inp.boundary.t_amb + q_cool[i];
            }
            for (e, g) in net.edges.iter().zip(&g_edge) {
                self.matrix.add(e.a, e.a, *g);
                self.matrix.add(e.b, e.b, *g);
                self.matrix.add(e.b, e.a, -*g);
            }
            for (s, p) in net.sources.iter().zip(&inp.source_power) {
                for &(node, share) in &s.nodes {
                    rhs[node] += p * share;
                }
            }
            if !self.matrix.cholesky() {
                return Err(Error::Invalid("conductance matrix is not positive definite".into()));
            }
            self.matrix.solve_factored(&mut rhs);
            let t_star = rhs;
            self.fluxes(&t_star, &g_edge, inp, &g_cool, &q_cool, &mut flux);
            let h_next: Vec<f64> = (0..n).map(|i| h_n[i] + dt * flux[i]).collect();
            residual = (0..n)
                .map(|i| (h_next[i] - h_k[i]).abs() / h_next[i].abs().max(self.cap_floor[i]))
                .fold(0.0, f64::max);
            if !residual.is_finite() {
                break;
            }
            if residual <= self.settings.tolerance {
                return Ok((t_star, h_next, g_edge, it));
            }
            t_prev.copy_from_slice(&t_k);
            h_prev = Some(std::mem::replace(&mut h_k, h_next));
        }
        Err(Error::NoConvergence {
            iterations: self.settings.max_iterations,
            residual,
            time,
        })
    }

    /// Advance `state` by `dt`.
    pub fn step(&mut self, state: &mut State, inp: &StepInputs, dt: f64) -> Result<StepReport> {
        if !(dt > 0.0) {
            return Err(Error::Invalid("dt must be positive".into()));
        }
        let net = self.net;
        let n = net.len();
        let h_n = state.enthalpy.clone();
        let mut tbar = state.fluid.clone();
        let mut h_start = h_n.clone();
        let mut report = StepReport::default();
        let mut last_adv: Option<AdvectOutcome> = None;
        let t_star: Vec<f64>;
        let g_edge_final: Vec<f64>;
        let mut coupling_iter = 0;
        loop {
            coupling_iter += 1;
            let (ts, h_new, g_edge, iters) = self.solve_solid(&h_n, &h_start, &tbar, inp, dt, state.time)?;
            report.iterations += iters;
            if net.segments.is_empty() {
                state.enthalpy = h_new;
                t_star = ts;
                g_edge_final = g_edge;
                break;
            }
            let wall: Vec<f64> = net.segments.iter().map(|s| ts[s.host]).collect();
            let adv = advect_coolant(&inp.coupling, inp.mdot_cp, inp.inlet_t, &state.fluid, &wall, dt);
            let delta = adv
                .mean
                .iter()
                .zip(&tbar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            tbar.clone_from(&adv.mean);
            last_adv = Some(adv);
            if delta <= self.settings.coupling_tolerance || coupling_iter >= self.settings.max_coupling_iterations {
                if delta > 1e-6 {
                    return Err(Error::NoConvergence {
                        iterations: coupling_iter,
                        residual: delta,
                        time: state.time,
                    });
                }
                t_star = ts;
                g_edge_final = g_edge;
                break;
            }
            h_start = h_new;
        }
        report.coupling_iterations = coupling_iter;

        // Rebuild the solid update with the final fluid mean so the solid and
        // fluid see the same exchanged heat.
        let mut g_cool = vec![0.0; n];
        let mut q_cool = vec![0.0; n];
        for (seg, (c, tf)) in net.segments.iter().zip(inp.coupling.iter().zip(&tbar)) {
            g_cool[seg.host] += c.g;
            q_cool[seg.host] += c.g * tf;
        }
        if let Some(adv) = last_adv {
            let mut flux = vec![0.0; n];
            self.fluxes(&t_star, &g_edge_final, inp, &g_cool, &q_cool, &mut flux);
            state.enthalpy = (0..n).map(|i| h_n[i] + dt * flux[i]).collect();
            report.e_coolant = adv.carried;
            report.e_fluid = inp
                .coupling
                .iter()
                .zip(adv.temps.iter().zip(&state.fluid))
                .map(|(c, (a, b))| c.c * (a - b))
                .sum();
            report.substeps = adv.substeps;
            state.fluid = adv.temps;
        }
        let h_amb = inp.boundary.h_total();
        report.e_ambient = dt
            * (0..n)
                .map(|i| h_amb * self.g_amb_area[i] * (t_star[i] - inp.boundary.t_amb))
                .sum::<f64>();
        report.e_in = dt * inp.source_power.iter().sum::<f64>();
        for i in 0..n {
            state.temperature[i] = net.nodes[i].curve.invert(state.enthalpy[i]);
        }
        state.time += dt;
        Ok(report)
    }
}

/// One backward-Euler step with a fresh workspace.
pub fn step(
    net: &ThermalNetwork,
    state: &mut State,
    inp: &StepInputs,
    dt: f64,
    settings: SolverSettings,
) -> Result<StepReport> {
    Stepper::new(net, settings).step(state, inp, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// J
    pub e_in: f64,
    pub e_stored: f64,
    pub e_coolant: f64,
    pub e_ambient: f64,
}

impl EnergyLedger {
    pub fn residual(&self) -> f64 {
        (self.e_in - self.e_stored - self.e_coolant - self.e_ambient).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub max_dt: f64,
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub max_coupling_iterations: usize,
    pub max_substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// s
    pub time: Vec<f64>,
    /// °C per probe label
    pub probes: BTreeMap<String, Vec<f64>>,
    /// Mass-weighted mean liquid fraction over all phase-change material.
    pub liquid_fraction: Vec<f64>,
    /// Coolant outlet temperature, °C (empty without a channel).
    pub outlet: Vec<f64>,
    pub ledger: EnergyLedger,
    pub diagnostics: Diagnostics,
    /// End of the heating phase, s.
    pub heat_end: f64,
}

impl SimResult {
    pub fn series(&self, label: &str) -> Result<&[f64]> {
        self.probes
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownProbe(label.to_string()))
    }

    /// Samples with time ≤ heat_end.
    pub fn heating_len(&self) -> usize {
        self.time.partition_point(|t| *t <= self.heat_end + 1e-9)
    }
}

pub fn energy_balance(result: &SimResult) -> f64 {
    result.ledger.residual() / result.ledger.e_in.abs().max(f64::EPSILON)
}

/// Everything a transient run needs besides the network.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub boundary: BoundaryCondition,
    /// Applied to every heated layer.
    pub power: PowerProfile,
    pub flow: FlowSchedule,
    pub inlet_t: f64,
    pub fluid: Option<MaterialProps>,
    pub initial_t: f64,
    pub duration: f64,
    pub heat_end: f64,
    pub settings: SolverSettings,
}

fn mean_liquid_fraction(net: &ThermalNetwork, temps: &[f64]) -> f64 {
    let mut mass = 0.0;
    let mut liquid = 0.0;
    for (node, t) in net.nodes.iter().zip(temps) {
        if let Some(p) = &node.pcm {
            mass += p.mass;
            liquid += p.mass * p.liquid_fraction(*t);
        }
    }
    if mass > 0.0 {
        liquid / mass
    } else {
        0.0
    }
}

fn probe_value(state: &State, target: ProbeTarget) -> f64 {
    match target {
        ProbeTarget::Node(i) => state.temperature[i],
        ProbeTarget::Coolant(j) => state.fluid[j],
    }
}

/// Integrate a network through `spec.duration`, sampling probes every
/// output interval.
pub fn run(net: &ThermalNetwork, spec: &RunSpec) -> Result<SimResult> {
    run_with_state(net, spec).map(|(r, _)| r)
}

/// As [`run`], also returning the final state.
pub fn run_with_state(net: &ThermalNetwork, spec: &RunSpec) -> Result<(SimResult, State)> {
    spec.settings.validate()?;
    spec.boundary.validate()?;
    if !(spec.duration >= 0.0) {
        return Err(Error::Invalid("duration must be non-negative".into()));
    }
    let coupling: Vec<SegmentCoupling> = if net.segments.is_empty() {
        Vec::new()
    } else {
        let fluid = spec
            .fluid
            .as_ref()
            .ok_or_else(|| Error::Invalid("network has a channel but no fluid".into()))?;
        let channel = net.channel.as_ref().expect("segments imply a channel");
        let h = film_coefficient(channel, fluid);
        net.segments
            .iter()
            .map(|s| SegmentCoupling {
                g: 1.0 / (1.0 / s.g_wall + 1.0 / (h * s.wetted_area)),
                c: fluid.rho_solid * fluid.cp * s.volume,
            })
            .collect()
    };
    if let (Some(fluid), Some(channel)) = (&spec.fluid, &net.channel) {
        for &(_, q) in spec.flow.segments() {
            let re = reynolds(q, channel, fluid);
            if re >= coolant::RE_TRANSITION {
                return Err(Error::UnsupportedRegime { reynolds: re });
            }
        }
    }

    let mut state = State::uniform(net, spec.initial_t);
    let h0: f64 = state.enthalpy.iter().sum();
    let fluid_cap: Vec<f64> = coupling.iter().map(|c| c.c).collect();
    let f0: f64 = state.fluid.iter().zip(&fluid_cap).map(|(t, c)| t * c).sum();

    let probes: Vec<(String, ProbeTarget)> = net.probes.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut result = SimResult {
        time: Vec::new(),
        probes: probes.iter().map(|(k, _)| (k.clone(), Vec::new())).collect(),
        liquid_fraction: Vec::new(),
        outlet: Vec::new(),
        ledger: EnergyLedger::default(),
        diagnostics: Diagnostics::default(),
        heat_end: spec.heat_end,
    };
    let record = |state: &State, result: &mut SimResult| {
        result.time.push(state.time);
        for (label, target) in &probes {
            result.probes.get_mut(label).unwrap().push(probe_value(state, *target));
        }
        result.liquid_fraction.push(mean_liquid_fraction(net, &state.temperature));
        if let Some(t) = state.fluid.last() {
            result.outlet.push(*t);
        }
    };
    record(&state, &mut result);

    let fluid_props = spec.fluid.clone();
    let mut stepper = Stepper::new(net, spec.settings);
    let mut next_out = spec.settings.output_interval;
    let mut ledger = EnergyLedger::default();
    let n_src = net.sources.len();
    while state.time < spec.duration - 1e-9 {
        let t0 = state.time;
        let dt = spec.settings.dt.min(spec.duration - t0);
        let p = spec.power.energy(t0, t0 + dt) / dt;
        let flow = spec.flow.at(t0 + 0.5 * dt);
        let inp = StepInputs {
            boundary: spec.boundary,
            source_power: vec![p; n_src],
            coupling: coupling.clone(),
            mdot_cp: fluid_props.as_ref().map_or(0.0, |f| capacity_rate(flow, f)),
            inlet_t: spec.inlet_t,
        };
        let rep = stepper.step(&mut state, &inp, dt)?;
        ledger.e_in += rep.e_in;
        ledger.e_ambient += rep.e_ambient;
        ledger.e_coolant += rep.e_coolant;
        let d = &mut result.diagnostics;
        d.steps += 1;
        d.max_dt = d.max_dt.max(dt);
        d.max_iterations = d.max_iterations.max(rep.iterations);
        d.total_iterations += rep.iterations;
        d.max_coupling_iterations = d.max_coupling_iterations.max(rep.coupling_iterations);
        d.max_substeps = d.max_substeps.max(rep.substeps);
        if state.time >= next_out - 1e-9 || state.time >= spec.duration - 1e-9 {
            record(&state, &mut result);
            while next_out <= state.time + 1e-9 {
                next_out += spec.settings.output_interval;
            }
        }
    }
    let h1: f64 = state.enthalpy.iter().sum();
    let f1: f64 = state.fluid.iter().zip(&fluid_cap).map(|(t, c)| t * c).sum();
    ledger.e_stored = (h1 - h0) + (f1 - f0);
    result.ledger = ledger;
    Ok((result, state))
}
