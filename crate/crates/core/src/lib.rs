//! Transient thermal simulation of hybrid liquid / phase-change cooling
//! modules for pouch cells.

// NaN-rejecting `!(x > 0.0)` checks and index-heavy stencil loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod loads;
pub mod materials;
pub mod scenarios;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
