use crate::error::{Error, Result};
use crate::hilbert::{same_space, CMatrix, DensityMatrix, HilbertSpace, C64};
use crate::lindblad::{measurement_operator, probe_model, HamiltonianKind, SystemParams};

/// Outcome of a plain Euler–Maruyama trajectory on the full density matrix.
#[derive(Clone, Debug)]
pub struct DenseTrajectory {
    pub s: f64,
    pub state: DensityMatrix,
    /// Mean current `⟨O + O†⟩` before each step.
    pub mean_current: Vec<f64>,
}

/// `dρ = Lρ dt + dW (Oρ + ρO† − tr(Oρ + ρO†) ρ)`, stepped literally.
/// Slow and only stable for small steps; used as a reference.
pub fn dense_trajectory(
    p: &SystemParams,
    kind: HamiltonianKind,
    rho_init: &DensityMatrix,
    filter: &[f64],
    mut noise: impl FnMut() -> f64,
) -> Result<DenseTrajectory> {
    let space = HilbertSpace::atom_resonator(p.n_cut)?;
    same_space(&space, rho_init.space())?;
    let n_steps = p.probe.n_steps();
    if filter.len() != n_steps {
        return Err(Error::GridMismatch {
            left: n_steps,
            right: filter.len(),
        });
    }
    let compiled = probe_model(p, kind, &space)?.compile();
    let o = measurement_operator(p, &space)?.into_matrix();
    let od = o.adjoint();
    let dt = p.probe.dt;
    let mut rho = rho_init.matrix().clone();
    let dim = rho.nrows();
    let mut l = CMatrix::zeros(dim, dim);
    let mut scratch = CMatrix::zeros(dim, dim);
    let mut s = 0.0;
    let mut mean_current = Vec::with_capacity(n_steps);
    for &h in filter {
        let a = &o * &rho + &rho * &od;
        let e = a.trace().re;
        mean_current.push(e);
        let dw = dt.sqrt() * noise();
        s += (e * dt + dw) * h;
        compiled.apply_into(&rho, &mut l, &mut scratch);
        rho += &l * C64::new(dt, 0.0) + (a - &rho * C64::new(e, 0.0)) * C64::new(dw, 0.0);
        let tr = rho.trace().re;
        rho /= C64::new(tr, 0.0);
    }
    Ok(DenseTrajectory {
        s,
        state: DensityMatrix::new_unchecked(space, rho)?,
        mean_current,
    })
}
