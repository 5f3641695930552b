//! Master-equation models and integrators.

mod integrate;
mod model;
mod params;
pub mod sector;

pub use integrate::{evolve, IntegratorConfig, Method, TRACE_DRIFT_LIMIT};
pub use model::{
    build_dispersive_hamiltonian, build_full_hamiltonian, interaction_model, liouvillian_apply, measurement_operator,
    probe_model, CascadedPair, CompiledModel, JumpPiece, LindbladModel, SparseOp,
};
pub use params::{
    dephasing_rate_from_t_phi, kappa_from_t1, rate_to_mhz, time_to_micros, HamiltonianKind, ProbeParams, SystemParams,
    GAMMA01_SI,
};
