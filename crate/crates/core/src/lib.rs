//! Event-driven simulation and numerical verification for two species of
//! lattice random walks that annihilate pairwise near the flat interface
//! separating their domains.
//!
//! The crate builds the discrete geometry (lattices, interface weights),
//! the drift-carrying conductances and their heat kernel, an exact
//! Gillespie simulator for the interacting system, correlation-function
//! estimators with exact small-system checks, solvers for the coupled
//! nonlinear heat equations the particle densities converge to, and the
//! exact tree-integral constants controlling the correlation hierarchy.

pub mod analytic;
pub mod checks;
pub mod configspace;
pub mod conductance;
pub mod correlation;
pub mod density;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod geometry;
pub mod jn;
pub mod kernel;
pub mod pde;
pub mod rat;
pub mod ratetree;
pub mod sim;

pub use error::{Error, Result};
