//! Initialization, interaction window and unconditional displacement.

use crate::error::{Error, Result};
use crate::hilbert::{
    coherent_state, displacement_operator, DensityMatrix, HilbertSpace, StateVector, ATOM, C64, RESONATOR, SOURCE,
};
use crate::lindblad::sector::{excitation_charges, SectorOptions, SectorPropagator};
use crate::lindblad::{evolve, interaction_model, HamiltonianKind, IntegratorConfig, SystemParams};

/// Integrator used for the interaction window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InteractionSolver {
    /// Charge-block propagator with exact in-block exponentials.
    Sector { step: f64, prune_tol: f64 },
    /// Dense fixed-step RK4 on the full density matrix.
    Dense { dt: f64 },
}

impl Default for InteractionSolver {
    fn default() -> Self {
        // Resolves the |δ1 + δ2| ≈ 100 phase carried by the cross-block inflow.
        InteractionSolver::Sector {
            step: 1.0 / 32.0,
            prune_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    /// Atom ⊗ resonator after the interaction, no photon sent.
    pub rho_joint_0: DensityMatrix,
    /// Atom ⊗ resonator after the interaction, one photon sent.
    pub rho_joint_1: DensityMatrix,
    pub rho_res_0: DensityMatrix,
    pub rho_res_1: DensityMatrix,
    pub t_interact_used: f64,
    /// Source occupation left in the photon branch when the source is traced out.
    pub source_residual: f64,
}

/// `|photon⟩_source ⊗ |0⟩_atom ⊗ |α⟩_resonator`.
pub fn initial_state(p: &SystemParams, photon: bool, space: &HilbertSpace) -> Result<DensityMatrix> {
    let src = StateVector::basis(&space.subsystem(SOURCE)?, &[usize::from(photon)])?;
    let atom = StateVector::basis(&space.subsystem(ATOM)?, &[0])?;
    let res = coherent_state(p.alpha, &space.subsystem(RESONATOR)?)?;
    Ok(StateVector::product(space, &[src, atom, res])?.to_density())
}

fn sector_step(t: f64, step: f64) -> (f64, usize) {
    let n = (t / step - 1e-9).ceil().max(1.0) as usize;
    (t / n as f64, n)
}

fn evolve_branch(
    p: &SystemParams,
    kind: HamiltonianKind,
    photon: bool,
    solver: InteractionSolver,
) -> Result<DensityMatrix> {
    let space = HilbertSpace::detector(p.n_cut)?;
    let model = interaction_model(p, kind, &space)?;
    let rho0 = initial_state(p, photon, &space)?;
    let out = match solver {
        InteractionSolver::Dense { dt } => {
            let mut cfg = IntegratorConfig::rk4(dt, vec![p.t_interact]);
            cfg.check_positivity = false;
            evolve(&model, &rho0, &cfg)?.pop().expect("one sample").1
        }
        InteractionSolver::Sector { step, prune_tol } => {
            let q = excitation_charges(&space)?;
            let compiled = model.compile();
            // Halve the step until the output is a valid state.
            let mut step = step;
            loop {
                let (h, n) = sector_step(p.t_interact, step);
                let opts = SectorOptions {
                    step: h,
                    prune_tol,
                    diagonal_only: false,
                };
                let mut prop = SectorPropagator::new(&compiled, space.clone(), &q, rho0.matrix(), opts)?;
                prop.advance(n);
                let out = prop.state()?;
                match check_state(&out, "interaction output") {
                    Err(Error::InvariantViolation(_)) if step > MIN_SECTOR_STEP => step *= 0.5,
                    other => return other.map(|_| out),
                }
            }
        }
    };
    check_state(&out, "interaction output")?;
    Ok(out)
}

const STATE_TOL: f64 = 1e-6;
const MIN_SECTOR_STEP: f64 = 1.0 / 64.0;

fn check_state(rho: &DensityMatrix, what: &str) -> Result<()> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
        return Err(Error::InvariantViolation(format!("{what}: trace {tr}")));
    }
    let m = rho.matrix();
    let herm = crate::hilbert::max_abs_diff(m, &m.adjoint());
    if herm > STATE_TOL {
        return Err(Error::InvariantViolation(format!("{what}: hermiticity error {herm:.3e}")));
    }
    let min = rho.min_eigenvalue();
    if min < -STATE_TOL {
        return Err(Error::InvariantViolation(format!("{what}: eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// Runs both photon branches through the interaction window.
pub fn run_interaction(p: &SystemParams, kind: HamiltonianKind) -> Result<SequenceResult> {
    run_interaction_with(p, kind, InteractionSolver::default())
}

pub fn run_interaction_with(p: &SystemParams, kind: HamiltonianKind, solver: InteractionSolver) -> Result<SequenceResult> {
    p.validate()?;
    let (full_0, full_1) = rayon::join(
        || evolve_branch(p, kind, false, solver),
        || evolve_branch(p, kind, true, solver),
    );
    let (full_0, full_1) = (full_0?, full_1?);
    let source_residual = {
        let src = full_1.partial_trace(SOURCE)?;
        src.matrix()[(1, 1)].re
    };
    let rho_joint_0 = full_0.trace_out(SOURCE)?;
    let rho_joint_1 = full_1.trace_out(SOURCE)?;
    Ok(SequenceResult {
        rho_res_0: rho_joint_0.partial_trace(RESONATOR)?,
        rho_res_1: rho_joint_1.partial_trace(RESONATOR)?,
        rho_joint_0,
        rho_joint_1,
        t_interact_used: p.t_interact,
        source_residual,
    })
}

/// Applies `D(−alpha)` on the resonator of both branches.
pub fn apply_unconditional_displacement(s: &SequenceResult, alpha: C64) -> Result<SequenceResult> {
    let d = displacement_operator(-alpha, s.rho_joint_0.space())?;
    let j0 = s.rho_joint_0.conjugate_by(&d)?;
    let j1 = s.rho_joint_1.conjugate_by(&d)?;
    Ok(SequenceResult {
        rho_res_0: j0.partial_trace(RESONATOR)?,
        rho_res_1: j1.partial_trace(RESONATOR)?,
        rho_joint_0: j0,
        rho_joint_1: j1,
        t_interact_used: s.t_interact_used,
        source_residual: s.source_residual,
    })
}

/// `P_E,M` sampled along one interaction run.
#[derive(Clone, Debug)]
pub struct InteractionProfile {
    pub times: Vec<f64>,
    pub p_e_m: Vec<f64>,
}

impl InteractionProfile {
    /// `(T, P_E,M)` at the smallest sampled error.
    pub fn best(&self) -> (f64, f64) {
        let mut best = (self.times[0], self.p_e_m[0]);
        for (&t, &v) in self.times.iter().zip(&self.p_e_m) {
            if v < best.1 {
                best = (t, v);
            }
        }
        best
    }
}

/// Projective-error weights `conj(α_n) α_m` for every stored element tracing onto `(n, m)`.
struct OverlapWeights {
    weights: Vec<(usize, C64, bool)>,
}

impl OverlapWeights {
    fn new(prop: &SectorPropagator, charges: &[i64], alpha_amps: &[C64]) -> Result<Self> {
        let space = prop.space();
        let r = space.position(RESONATOR)?;
        let mut weights = Vec::new();
        for (idx, (i, j, _)) in prop.stored().enumerate() {
            let (li, lj) = (space.levels(i), space.levels(j));
            let same_rest = li.iter().zip(&lj).enumerate().all(|(k, (a, b))| k == r || a == b);
            if same_rest {
                let w = alpha_amps[li[r]].conj() * alpha_amps[lj[r]];
                weights.push((idx, w, charges[i] != charges[j]));
            }
        }
        Ok(Self { weights })
    }

    fn overlap(&self, values: &[C64]) -> f64 {
        let mut acc = 0.0;
        for &(idx, w, mirrored) in &self.weights {
            let z = w * values[idx];
            acc += if mirrored { 2.0 * z.re } else { z.re };
        }
        acc
    }
}

/// Evolves both branches once up to `t_max` and records `P_E,M` after every step.
/// The step is shrunk so that the grid ends exactly at `t_max`.
pub fn interaction_profile(
    p: &SystemParams,
    kind: HamiltonianKind,
    t_max: f64,
    step: f64,
    prune_tol: f64,
) -> Result<InteractionProfile> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidParams(format!("t_max must be positive, got {t_max}")));
    }
    let mut q = p.clone();
    q.t_interact = t_max;
    q.validate()?;
    let space = HilbertSpace::detector(p.n_cut)?;
    let model = interaction_model(p, kind, &space)?;
    let compiled = model.compile();
    let charges = excitation_charges(&space)?;
    let (h, n) = sector_step(t_max, step);
    let opts = SectorOptions {
        step: h,
        prune_tol,
        diagonal_only: false,
    };
    let amps: Vec<C64> = coherent_state(p.alpha, &space.subsystem(RESONATOR)?)?
        .amplitudes()
        .iter()
        .copied()
        .collect();
    let build = |photon: bool| -> Result<(SectorPropagator, OverlapWeights)> {
        let rho0 = initial_state(p, photon, &space)?;
        let prop = SectorPropagator::new(&compiled, space.clone(), &charges, rho0.matrix(), opts)?;
        let w = OverlapWeights::new(&prop, &charges, &amps)?;
        Ok((prop, w))
    };
    let (mut s0, w0) = build(false)?;
    let (mut s1, w1) = build(true)?;
    let mut times = Vec::with_capacity(n);
    let mut p_e_m = Vec::with_capacity(n);
    let mut v0 = Vec::new();
    let mut v1 = Vec::new();
    for k in 1..=n {
        s0.step();
        s1.step();
        v0.clear();
        v0.extend(s0.stored().map(|e| e.2));
        v1.clear();
        v1.extend(s1.stored().map(|e| e.2));
        let o0 = w0.overlap(&v0);
        let o1 = w1.overlap(&v1);
        let drift = (s1.trace() - 1.0).abs().max((s0.trace() - 1.0).abs());
        if drift > crate::lindblad::TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::InvariantViolation(format!("trace drifted by {drift:.3e}")));
        }
        times.push(if k == n { t_max } else { k as f64 * h });
        p_e_m.push(0.5 * (1.0 - o0) + 0.5 * o1);
    }
    Ok(InteractionProfile { times, p_e_m })
}
