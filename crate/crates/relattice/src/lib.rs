//! Core library: lattice geometry, per-cycle loss models, collision-aware
//! rearrangement planning, stochastic cycle simulation and trace analysis.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod loss;
pub mod num;
pub mod planner;
pub mod sim;

pub use crate::num::Scalar;

/// Working precision used by the binary and the integration tests. The core
/// is generic; these aliases pin the production choice in one place.
pub type Real = f64;
pub type Geometry = geometry::LatticeGeometry<Real>;
pub type Potential = geometry::PotentialModel<Real>;
