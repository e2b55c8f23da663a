//! Simulation and monitoring toolkit for radio dynamic zones.

pub mod compliance;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod kriging;
pub mod leakage;
pub mod propagation;
pub mod tdoa;

pub use error::{Error, Result};

/// 3D position in meters.
pub type Point3 = nalgebra::Point3<f64>;
