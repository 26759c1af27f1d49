//! WebAssembly bindings for the demo page. Every export takes plain numbers
//! and strings and returns a JSON string.

use serde_json::json;
use wasm_bindgen::prelude::*;

use hexcool::analysis::{summarize, sweep, SUMMARY_PROBE};
use hexcool::materials::{builtin_materials, EnthalpyCurve};
use hexcool::scenarios::get;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Probe traces for a registry scenario at the given flow and heater power.
pub fn simulate_json(id: &str, flow: f64, power: f64) -> Result<String, String> {
    let base = get(id).map_err(err)?;
    let mut s = base.with_param("power", power).map_err(err)?;
    if s.geometry.channel.is_some() && flow > 0.0 {
        s = s.with_flow(flow);
    }
    let r = s.simulate().map_err(err)?;
    let sm = summarize(&r, SUMMARY_PROBE).map_err(err)?;
    Ok(json!({
        "id": s.id,
        "description": s.description,
        "time": r.time,
        "probes": r.probes,
        "liquid_fraction": r.liquid_fraction,
        "heat_end": r.heat_end,
        "summary": sm,
    })
    .to_string())
}

/// Heating peak against flow rate.
pub fn flow_sweep_json(id: &str, flows: &[f64]) -> Result<String, String> {
    let s = get(id).map_err(err)?;
    if s.geometry.channel.is_none() {
        return Err(format!("{id} has no coolant channel"));
    }
    let sw = sweep(&s, "flow_rate", flows, 1).map_err(err)?;
    Ok(json!({ "flow": sw.grid, "peak": sw.peaks(), "points": sw.points }).to_string())
}

/// Specific enthalpy (J/kg) sampled on `n` temperatures in [t_min, t_max].
pub fn enthalpy_curve_json(material: &str, t_min: f64, t_max: f64, n: usize) -> Result<String, String> {
    let reg = builtin_materials();
    let m = reg.get(material).map_err(err)?;
    if n < 2 || !t_min.is_finite() || !t_max.is_finite() || t_max <= t_min {
        return Err("need n ≥ 2 and t_max > t_min".into());
    }
    let c = EnthalpyCurve::for_material(m);
    let temps: Vec<f64> = (0..n).map(|i| t_min + (t_max - t_min) * i as f64 / (n - 1) as f64).collect();
    let h = temps.iter().map(|t| c.enthalpy(*t)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    Ok(json!({ "material": m.name, "t": temps, "h": h, "t_solidus": m.t_solidus, "t_liquidus": m.t_liquidus }).to_string())
}

pub fn materials_json() -> String {
    let reg = builtin_materials();
    json!(reg.names().collect::<Vec<_>>()).to_string()
}

#[wasm_bindgen]
pub fn simulate(id: &str, flow: f64, power: f64) -> Result<String, JsError> {
    simulate_json(id, flow, power).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn flow_sweep(id: &str, flows: Vec<f64>) -> Result<String, JsError> {
    flow_sweep_json(id, &flows).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn enthalpy_curve(material: &str, t_min: f64, t_max: f64, n: usize) -> Result<String, JsError> {
    enthalpy_curve_json(material, t_min, t_max, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn materials() -> String {
    materials_json()
}
