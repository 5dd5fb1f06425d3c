//! Robust multiple rotation averaging on SO(3).
//!
//! The pipeline takes a view graph of noisy relative rotations, reweights the
//! measurements by enforcing cycle consistency ([`denoise`]), then recovers
//! absolute rotations with an iteratively reweighted least-squares solver using
//! the exponential cost `rho(x) = x * exp(tau * x)` ([`solver`]).
//!
//! ```
//! use rotsync::{denoise, solver, synth};
//!
//! let spec = synth::SyntheticSpec { n: 20, edge_density: 0.5, ..Default::default() };
//! let (graph, truth) = synth::generate(&spec).unwrap();
//! let (weighted, _) = denoise::denoise(&graph, &denoise::DenoiseConfig::default()).unwrap();
//! let report = solver::solve(
//!     &weighted,
//!     &solver::SolverConfig::default(),
//!     &solver::CostFunction::exponential(),
//! )
//! .unwrap();
//! let eval = synth::align(&report.rotations, &truth).unwrap();
//! assert!(eval.mean_deg < 1e-6);
//! ```

pub mod cost;
pub mod denoise;
pub mod error;
pub mod graph;
pub mod io;
pub mod so3;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{Cycle, CycleSet, ViewGraph};
pub use so3::{geodesic_distance, Rotation, TangentVector};
