//! Single-node energy balance m·cp·dT/dt = Q − hA·(T − T_amb) in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loads::PowerProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpedCellParams {
    /// kg
    pub m: f64,
    /// J/(kg K)
    pub cp: f64,
    /// W/K
    pub ha: f64,
    /// °C
    pub t_amb: f64,
}

impl LumpedCellParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.cp > 0.0 && self.ha > 0.0) {
            return Err(Error::Invalid("lumped parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn time_constant(&self) -> f64 {
        self.m * self.cp / self.ha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedSeries {
    pub time: Vec<f64>,
    pub temp: Vec<f64>,
}

pub fn steady_state_lumped(q: f64, ha: f64, t_amb: f64) -> Result<f64> {
    if !(ha > 0.0) {
        return Err(Error::Divergent);
    }
    Ok(t_amb + q / ha)
}

/// Exact temperature at `t`, chaining the exponential response across the
/// constant-power segments of `profile`. Starts at T_amb.
pub fn lumped_at(p: &LumpedCellParams, profile: &PowerProfile, t: f64) -> f64 {
    let tau = p.time_constant();
    let mut temp = p.t_amb;
    let mut now = 0.0;
    let mut edges: Vec<f64> = profile.breaks_in(0.0, t).collect();
    edges.push(t);
    for end in edges {
        let q = profile.at(now);
        let target = p.t_amb + q / p.ha;
        temp = target + (temp - target) * (-(end - now) / tau).exp();
        now = end;
    }
    temp
}

pub fn lumped_simulate(p: &LumpedCellParams, profile: &PowerProfile, t_end: f64, dt_out: f64) -> Result<LumpedSeries> {
    p.validate()?;
    if !(dt_out > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Invalid("output step and end time must be positive".into()));
    }
    let n = (t_end / dt_out).round() as usize;
    let time: Vec<f64> = (0..=n).map(|i| i as f64 * dt_out).collect();
    let temp = time.iter().map(|&t| lumped_at(p, profile, t)).collect();
    Ok(LumpedSeries { time, temp })
}
