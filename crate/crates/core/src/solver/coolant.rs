//! Coolant loop: laminar film closure and the sub-cycled upwind march.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelPath;
use crate::materials::MaterialProps;

/// Fully developed laminar Nusselt number, constant wall temperature.
pub const NU_LAMINAR: f64 = 3.66;
pub const RE_TRANSITION: f64 = 2300.0;

/// ml/min to m³/s.
pub fn ml_per_min(q: f64) -> f64 {
    q * 1e-6 / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolantLoop {
    /// ml/min
    pub flow_rate: f64,
    /// °C
    pub inlet_t: f64,
    pub fluid: String,
    pub channel: ChannelPath,
    pub n_segments: usize,
}

impl CoolantLoop {
    pub fn validate(&self) -> Result<()> {
        if !(self.flow_rate >= 0.0) {
            return Err(Error::Invalid("flow rate must be non-negative".into()));
        }
        if self.n_segments == 0 {
            return Err(Error::Invalid("coolant loop needs at least one segment".into()));
        }
        self.channel.validate()
    }
}

pub fn reynolds(flow_rate: f64, channel: &ChannelPath, fluid: &MaterialProps) -> f64 {
    let mu = fluid.viscosity.unwrap_or(f64::INFINITY);
    let v = ml_per_min(flow_rate) / channel.flow_area();
    fluid.rho_solid * v * channel.hydraulic_diameter() / mu
}

/// Film coefficient from the constant-Nu closure, W/(m² K). Also used for
/// stagnant fluid.
pub fn film_coefficient(channel: &ChannelPath, fluid: &MaterialProps) -> f64 {
    NU_LAMINAR * fluid.k_solid / channel.hydraulic_diameter()
}

pub fn channel_htc(lp: &CoolantLoop, fluid: &MaterialProps) -> Result<f64> {
    lp.validate()?;
    let re = reynolds(lp.flow_rate, &lp.channel, fluid);
    if re >= RE_TRANSITION {
        return Err(Error::UnsupportedRegime { reynolds: re });
    }
    Ok(film_coefficient(&lp.channel, fluid))
}

/// Capacity rate ṁ·cp, W/K.
pub fn capacity_rate(flow_rate: f64, fluid: &MaterialProps) -> f64 {
    ml_per_min(flow_rate) * fluid.rho_solid * fluid.cp
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentCoupling {
    /// Wall-to-fluid conductance, W/K.
    pub g: f64,
    /// Fluid heat capacity of the segment, J/K.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvectOutcome {
    pub temps: Vec<f64>,
    /// Time average of each segment temperature over the step.
    pub mean: Vec<f64>,
    /// Net enthalpy carried out of the channel, J.
    pub carried: f64,
    /// Heat taken up from the walls, J.
    pub exchanged: f64,
    pub substeps: usize,
}

impl AdvectOutcome {
    /// Mean transport power over the step, W.
    pub fn heat_removed(&self, dt: f64) -> f64 {
        self.carried / dt
    }

    pub fn outlet(&self) -> f64 {
        *self.temps.last().unwrap_or(&f64::NAN)
    }
}

/// March the fluid through `dt` with the wall temperatures held fixed.
///
/// Advection is explicit first-order upwind, sub-cycled so the Courant
/// number ṁcp·Δt/C stays at or below one in every segment; wall exchange
/// within a substep is implicit.
pub fn advect_coolant(
    segs: &[SegmentCoupling],
    mdot_cp: f64,
    inlet_t: f64,
    fluid_t: &[f64],
    wall_t: &[f64],
    dt: f64,
) -> AdvectOutcome {
    let n = segs.len();
    let c_min = segs.iter().map(|s| s.c).fold(f64::INFINITY, f64::min);
    let substeps = if mdot_cp > 0.0 {
        ((mdot_cp * dt / c_min).ceil() as usize).max(1)
    } else {
        1
    };
    let dts = dt / substeps as f64;
    let mut t = fluid_t.to_vec();
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut carried = 0.0;
    let mut exchanged = 0.0;
    for _ in 0..substeps {
        carried += dts * mdot_cp * (t[n - 1] - inlet_t);
        for j in 0..n {
            let up = if j == 0 { inlet_t } else { t[j - 1] };
            let s = segs[j];
            next[j] = (s.c * t[j] + dts * (mdot_cp * (up - t[j]) + s.g * wall_t[j])) / (s.c + dts * s.g);
            exchanged += dts * s.g * (wall_t[j] - next[j]);
            acc[j] += dts * next[j];
        }
        std::mem::swap(&mut t, &mut next);
    }
    AdvectOutcome {
        temps: t,
        mean: acc.into_iter().map(|a| a / dt).collect(),
        carried,
        exchanged,
        substeps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{builtin_materials, WATER};
    use approx::assert_relative_eq;

    fn square3() -> ChannelPath {
        ChannelPath {
            width: 0.003,
            height: 0.003,
            segments: vec![0.3],
            wall_separation: 0.001,
        }
    }

    fn water() -> MaterialProps {
        builtin_materials().get(WATER).unwrap().clone()
    }

    #[test]
    fn film_for_square_water_channel() {
        let lp = CoolantLoop {
            flow_rate: 8.0,
            inlet_t: 20.0,
            fluid: WATER.into(),
            channel: square3(),
            n_segments: 10,
        };
        assert_relative_eq!(lp.channel.hydraulic_diameter(), 0.003, max_relative = 1e-12);
        assert_relative_eq!(channel_htc(&lp, &water()).unwrap(), 732.0, max_relative = 1e-12);
        let doubled = CoolantLoop { flow_rate: 16.0, ..lp.clone() };
        assert_eq!(channel_htc(&doubled, &water()).unwrap(), 732.0);
    }

    #[test]
    fn reynolds_stays_laminar_at_top_flow() {
        let re = reynolds(24.0, &square3(), &water());
        assert!(re < 200.0, "{re}");
        let lp = CoolantLoop {
            flow_rate: 2.0e5,
            inlet_t: 20.0,
            fluid: WATER.into(),
            channel: square3(),
            n_segments: 1,
        };
        assert!(matches!(channel_htc(&lp, &water()), Err(Error::UnsupportedRegime { .. })));
    }

    #[test]
    fn capacity_rate_at_eight() {
        let c = capacity_rate(8.0, &water());
        assert!((c - 0.558).abs() < 1e-3, "{c}");
    }

    #[test]
    fn equilibrium_and_static_limits() {
        let segs = vec![SegmentCoupling { g: 0.3, c: 1.0 }; 5];
        let out = advect_coolant(&segs, 0.558, 20.0, &[20.0; 5], &[20.0; 5], 1.0);
        assert!(out.temps.iter().all(|t| (*t - 20.0).abs() < 1e-12));
        assert_eq!(out.carried, 0.0);
        assert_eq!(out.exchanged, 0.0);
        // stagnant fluid: no transport, only exchange
        let out = advect_coolant(&segs, 0.0, 20.0, &[20.0; 5], &[30.0; 5], 1.0);
        assert_eq!(out.carried, 0.0);
        assert!(out.exchanged > 0.0);
    }

    #[test]
    fn energy_closes_and_cfl_respected() {
        let segs: Vec<_> = (0..8).map(|i| SegmentCoupling { g: 0.1 + 0.02 * i as f64, c: 0.5 }).collect();
        let fluid: Vec<f64> = (0..8).map(|i| 20.0 + i as f64).collect();
        let wall: Vec<f64> = (0..8).map(|i| 40.0 - i as f64).collect();
        let out = advect_coolant(&segs, 1.674, 20.0, &fluid, &wall, 1.0);
        assert!(1.674 * (1.0 / out.substeps as f64) / 0.5 <= 1.0);
        let stored: f64 = out.temps.iter().zip(&fluid).map(|(a, b)| 0.5 * (a - b)).sum();
        assert_relative_eq!(stored, out.exchanged - out.carried, epsilon = 1e-12);
        // exchange equals G·(T_wall − mean fluid) summed
        let ex: f64 = segs.iter().enumerate().map(|(j, s)| s.g * (wall[j] - out.mean[j])).sum();
        assert_relative_eq!(ex, out.exchanged, epsilon = 1e-12);
    }

    #[test]
    fn long_hot_channel_approaches_wall() {
        let segs = vec![SegmentCoupling { g: 5.0, c: 0.2 }; 20];
        let mut t = vec![20.0; 20];
        for _ in 0..200 {
            t = advect_coolant(&segs, 0.14, 20.0, &t, &[50.0; 20], 1.0).temps;
        }
        assert!((t[19] - 50.0).abs() < 1e-6);
    }
}
