//! Deformation-based wrench sensing for a compliant wrist: pose algebra,
//! stiffness calibration, a simulated wrist and contact scenes, and a
//! threshold-driven policy library.

pub mod acceptance;
pub mod calibration;
pub mod error;
pub mod maze;
pub mod policies;
pub mod se3;
pub mod sensing;
pub mod world;
pub mod wrist;

pub use error::{Error, Result};
