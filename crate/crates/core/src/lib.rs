//! Simulation of a sequential nonabsorbing microwave single-photon detector.
//!
//! Units: ħ = 1 and the atom decay rate γ01 = 1; times are in 1/γ01.

pub mod artifact;
pub mod config;
pub mod error;
pub mod hilbert;
pub mod lindblad;
pub mod metrics;
pub mod optimizer;
pub mod probe;
pub mod sequence;

pub use error::{Error, Result};
