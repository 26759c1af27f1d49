use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside curve domain [{lo}, {hi}] for {material}")]
    Domain {
        material: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("material {0} has no latent heat; not a phase-change material")]
    NotPhaseChange(String),

    #[error("unknown material {0}")]
    UnknownMaterial(String),

    #[error("invalid material {name}: {reason}")]
    InvalidMaterial { name: String, reason: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("unknown probe label {0}")]
    UnknownProbe(String),

    #[error("unsupported flow regime: Re = {reynolds:.1} (laminar closure requires Re < 2300)")]
    UnsupportedRegime { reynolds: f64 },

    #[error("step failed to converge after {iterations} iterations (residual {residual:.3e}) at t = {time} s")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        time: f64,
    },

    #[error("steady state diverges: hA must be positive")]
    Divergent,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
