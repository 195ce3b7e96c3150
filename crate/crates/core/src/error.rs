//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no lattice point of the shifted grid lies inside the domain")]
    EmptyLattice,
    #[error("anchor {0:?} is not an interior lattice vertex of its domain")]
    DisconnectedAnchor(Vec<f64>),
    #[error("interface point {point:?} has no lattice site within 2*M*eps on the {side} side")]
    NoPairableSite { point: Vec<f64>, side: &'static str },
    #[error("conductance on edge ({0}, {1}) is non-positive; eps is too coarse for this density")]
    NonpositiveWeight(usize, usize),
    #[error("uniformization needs more than {cap} terms to reach tolerance {tol:e}")]
    ToleranceNotReached { cap: usize, tol: f64 },
    #[error("graph has {0} vertices; exhaustive subset checks are capped at {1}")]
    TooLargeForBruteForce(usize, usize),
    #[error("configuration space has {0} states, above the cap {1}")]
    StateSpaceTooLarge(usize, usize),
    #[error("estimator stderr {got:e} exceeds the configured cap {cap:e}; add replicas")]
    InsufficientReplicas { got: f64, cap: f64 },
    #[error("N*eps^d = {0} deviates from 1 beyond the allowed relaxation")]
    BadScaling(f64),
    #[error("fixed-point iteration did not converge in {0} sweeps; shorten the window")]
    NoConvergence(usize),
    #[error("interface Newton solve diverged at step {step} (residual {residual:e})")]
    NewtonDivergence { step: usize, residual: f64 },
    #[error("no admissible Gaussian-bound constants in the search box")]
    FitFailure,
    #[error("dense kernel requested for {0} vertices, above the guard {1}")]
    ResourceGuard(usize, usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
