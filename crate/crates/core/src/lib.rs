//! Multi-base-station sensing of permittivity and conductivity maps.
//!
//! The pipeline runs from scene description through a 2D method-of-moments
//! scattering model, per-BS group-sparse inversion fused by consensus
//! equilibrium, pilot design and material identification.

pub mod em;
pub mod error;
pub mod harness;
pub mod mace;
pub mod material;
pub mod pilot;
pub mod scenario;
pub mod scene;
pub mod sensing;
pub mod solver;
pub mod special;

pub use error::{Error, Result};

pub use num_complex::Complex64 as C64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
