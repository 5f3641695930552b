use crate::error::{Error, Result};
use crate::hilbert::{matmul, same_space, CMatrix, DensityMatrix, HilbertSpace, Operator, ATOM, C64, RESONATOR, SOURCE};

use super::params::{chi, HamiltonianKind, SystemParams};

/// Unidirectional coupling of a source mode's output into a target transition.
#[derive(Clone, Debug)]
pub struct CascadedPair {
    pub source: Operator,
    pub source_rate: f64,
    pub target: Operator,
    pub target_rate: f64,
}

#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub hamiltonian: Operator,
    pub collapse_terms: Vec<(f64, Operator)>,
    pub cascaded_pair: Option<CascadedPair>,
}

impl LindbladModel {
    pub fn new(
        hamiltonian: Operator,
        collapse_terms: Vec<(f64, Operator)>,
        cascaded_pair: Option<CascadedPair>,
    ) -> Result<Self> {
        let space = hamiltonian.space();
        for (rate, op) in &collapse_terms {
            if !rate.is_finite() || *rate < 0.0 {
                return Err(Error::InvalidParams(format!("collapse rate {rate} must be non-negative")));
            }
            same_space(space, op.space())?;
        }
        if let Some(pair) = &cascaded_pair {
            for r in [pair.source_rate, pair.target_rate] {
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::InvalidParams(format!("cascaded rate {r} must be non-negative")));
                }
            }
            same_space(space, pair.source.space())?;
            same_space(space, pair.target.space())?;
        }
        Ok(Self {
            hamiltonian,
            collapse_terms,
            cascaded_pair,
        })
    }

    pub fn space(&self) -> &HilbertSpace {
        self.hamiltonian.space()
    }

    /// Lowers the model into `−i(H_eff ρ − ρ H_eff†) + Σ c X ρ Y†` with sparse factors.
    pub fn compile(&self) -> CompiledModel {
        let d = self.space().dim();
        let i = C64::new(0.0, 1.0);
        let mut h_eff = self.hamiltonian.matrix().clone();
        let mut pieces = Vec::new();
        for (rate, op) in &self.collapse_terms {
            if *rate == 0.0 {
                continue;
            }
            let l = op.matrix();
            h_eff -= matmul(&l.adjoint(), l) * (i * (0.5 * rate));
            let s = SparseOp::from_dense(l);
            pieces.push(JumpPiece {
                coef: *rate,
                left: s.clone(),
                right: s,
            });
        }
        if let Some(pair) = &self.cascaded_pair {
            let amp = (pair.source_rate * pair.target_rate).sqrt();
            if amp != 0.0 {
                let c = pair.source.matrix();
                let t = pair.target.matrix();
                // [cρ, t†] + [t, ρc†]: the left/right products fold into H_eff.
                h_eff -= matmul(&t.adjoint(), c) * (i * amp);
                let cs = SparseOp::from_dense(c);
                let ts = SparseOp::from_dense(t);
                pieces.push(JumpPiece {
                    coef: amp,
                    left: cs.clone(),
                    right: ts.clone(),
                });
                pieces.push(JumpPiece {
                    coef: amp,
                    left: ts,
                    right: cs,
                });
            }
        }
        CompiledModel {
            dim: d,
            h_eff: SparseOp::from_dense(&h_eff),
            h_eff_dense: h_eff,
            pieces,
        }
    }
}

/// Sparse matrix as a list of `(row, col, value)` triplets.
#[derive(Clone, Debug)]
pub struct SparseOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            dim: m.nrows(),
            entries,
        }
    }

    /// `out += A x` with `x`, `out` column-major `dim × dim`.
    fn left_mul_acc(&self, x: &[C64], out: &mut [C64], scale: C64) {
        let n = self.dim;
        for col in 0..n {
            let xc = &x[col * n..(col + 1) * n];
            let oc = &mut out[col * n..(col + 1) * n];
            for &(r, k, v) in &self.entries {
                oc[r] += scale * v * xc[k];
            }
        }
    }

    /// `out += x A†`.
    fn right_adj_mul_acc(&self, x: &[C64], out: &mut [C64], scale: C64) {
        let n = self.dim;
        for &(j, k, v) in &self.entries {
            let f = scale * v.conj();
            let (xs, os) = (k * n, j * n);
            for r in 0..n {
                out[os + r] += f * x[xs + r];
            }
        }
    }
}

/// `coef · X ρ Y†`.
#[derive(Clone, Debug)]
pub struct JumpPiece {
    pub coef: f64,
    pub left: SparseOp,
    pub right: SparseOp,
}

#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub dim: usize,
    pub h_eff: SparseOp,
    pub h_eff_dense: CMatrix,
    pub pieces: Vec<JumpPiece>,
}

impl CompiledModel {
    /// `out = L(ρ)`, `scratch` must have `dim²` entries.
    pub fn apply_into(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) {
        let x = rho.as_slice();
        let o = out.as_mut_slice();
        o.fill(C64::new(0.0, 0.0));
        let mi = C64::new(0.0, -1.0);
        self.h_eff.left_mul_acc(x, o, mi);
        self.h_eff.right_adj_mul_acc(x, o, -mi);
        let t = scratch.as_mut_slice();
        for p in &self.pieces {
            t.fill(C64::new(0.0, 0.0));
            p.left.left_mul_acc(x, t, C64::new(p.coef, 0.0));
            p.right.right_adj_mul_acc(t, o, C64::new(1.0, 0.0));
        }
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        let mut scratch = CMatrix::zeros(self.dim, self.dim);
        self.apply_into(rho, &mut out, &mut scratch);
        out
    }
}

/// `dρ/dt` for the given model.
pub fn liouvillian_apply(m: &LindbladModel, rho: &DensityMatrix) -> Result<CMatrix> {
    same_space(m.space(), rho.space())?;
    Ok(m.compile().apply(rho.matrix()))
}

/// `H = δ1 σ11 + (δ1+δ2) σ22 − i g (a σ21 − a† σ12)`, plus `Ω(σ01 + σ10)` with δ1 → δ1_probe when probing.
pub fn build_full_hamiltonian(p: &SystemParams, include_probe: bool, space: &HilbertSpace) -> Result<Operator> {
    let delta1 = if include_probe { p.probe.delta1_probe } else { p.delta1 };
    let s11 = space.sigma(1, 1)?;
    let s22 = space.sigma(2, 2)?;
    let s21 = space.sigma(2, 1)?;
    let a = space.annihilation(RESONATOR)?;
    let i = C64::new(0.0, 1.0);
    let coupling = &(&a * &s21) - &(&a.adjoint() * &s21.adjoint());
    let mut h = &(&s11.scale_re(delta1) + &s22.scale_re(delta1 + p.delta2)) + &coupling.scale(-i * p.g);
    if include_probe {
        h = &h + &probe_drive(p, space)?;
    }
    Ok(h)
}

/// `H_disp = δ1 σ11 − χ σ11 a†a`, χ = g²/(δ1+δ2).
pub fn build_dispersive_hamiltonian(p: &SystemParams, space: &HilbertSpace) -> Result<Operator> {
    dispersive_with(p.delta1, p.delta2, p.g, space)
}

fn dispersive_with(delta1: f64, delta2: f64, g: f64, space: &HilbertSpace) -> Result<Operator> {
    let chi = chi(g, delta1 + delta2)?;
    let s11 = space.sigma(1, 1)?;
    let a = space.annihilation(RESONATOR)?;
    let n = &a.adjoint() * &a;
    Ok(&s11.scale_re(delta1) - &(&s11 * &n).scale_re(chi))
}

fn probe_drive(p: &SystemParams, space: &HilbertSpace) -> Result<Operator> {
    let s01 = space.sigma(0, 1)?;
    Ok((&s01 + &s01.adjoint()).scale_re(p.probe.omega))
}

/// Interaction-stage model on `source ⊗ atom ⊗ resonator`: the cascaded master equation
/// with decay, resonator loss and pure dephasing of the two excited levels.
pub fn interaction_model(p: &SystemParams, kind: HamiltonianKind, space: &HilbertSpace) -> Result<LindbladModel> {
    space.position(SOURCE)?;
    let h = match kind {
        HamiltonianKind::Full => build_full_hamiltonian(p, false, space)?,
        HamiltonianKind::Dispersive => build_dispersive_hamiltonian(p, space)?,
    };
    let c = space.annihilation(SOURCE)?;
    let s01 = space.sigma(0, 1)?;
    let mut collapse = vec![(p.gamma_c, c.clone()), (p.gamma01, s01.clone())];
    collapse.extend(atom_and_resonator_losses(p, space)?);
    let pair = CascadedPair {
        source: c,
        source_rate: p.gamma_c,
        target: s01,
        target_rate: p.gamma01,
    };
    LindbladModel::new(h, collapse, Some(pair))
}

/// Probe-stage model on `atom ⊗ resonator` (source already traced out).
pub fn probe_model(p: &SystemParams, kind: HamiltonianKind, space: &HilbertSpace) -> Result<LindbladModel> {
    let h = match kind {
        HamiltonianKind::Full => build_full_hamiltonian(p, true, space)?,
        HamiltonianKind::Dispersive => {
            let hd = dispersive_with(p.probe.delta1_probe, p.delta2, p.g, space)?;
            &hd + &probe_drive(p, space)?
        }
    };
    let mut collapse = vec![(p.gamma01, space.sigma(0, 1)?)];
    collapse.extend(atom_and_resonator_losses(p, space)?);
    LindbladModel::new(h, collapse, None)
}

fn atom_and_resonator_losses(p: &SystemParams, space: &HilbertSpace) -> Result<Vec<(f64, Operator)>> {
    Ok(vec![
        (p.gamma12, space.sigma(1, 2)?),
        (p.kappa, space.annihilation(RESONATOR)?),
        (p.gamma11, space.sigma(1, 1)?),
        (p.gamma22, space.sigma(2, 2)?),
    ])
}

/// Homodyne measurement operator `O = e^{−iφ} √γ01 σ01`.
pub fn measurement_operator(p: &SystemParams, space: &HilbertSpace) -> Result<Operator> {
    space.position(ATOM)?;
    let phase = C64::from_polar(p.gamma01.sqrt(), -p.probe.phi);
    Ok(space.sigma(0, 1)?.scale(phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{max_abs_diff, StateVector};

    fn textbook_rhs(m: &LindbladModel, rho: &CMatrix) -> CMatrix {
        let i = C64::new(0.0, 1.0);
        let h = m.hamiltonian.matrix();
        let mut out = (h * rho - rho * h) * (-i);
        for (r, op) in &m.collapse_terms {
            let l = op.matrix();
            let ld = l.adjoint();
            out += (l * rho * &ld * C64::new(2.0, 0.0) - rho * &ld * l - &ld * l * rho) * C64::new(0.5 * r, 0.0);
        }
        if let Some(pair) = &m.cascaded_pair {
            let c = pair.source.matrix();
            let s01 = pair.target.matrix();
            let s10 = s01.adjoint();
            let cd = c.adjoint();
            let amp = (pair.source_rate * pair.target_rate).sqrt();
            let a = c * rho;
            let b = rho * &cd;
            out += (&a * &s10 - &s10 * &a + s01 * &b - &b * s01) * C64::new(amp, 0.0);
        }
        out
    }

    #[test]
    fn zero_hamiltonian_when_decoupled() {
        let s = HilbertSpace::detector(4).unwrap();
        let p = SystemParams {
            g: 0.0,
            delta1: 0.0,
            delta2: 0.0,
            ..SystemParams::headline()
        };
        let h = build_full_hamiltonian(&p, false, &s).unwrap();
        assert!(h.matrix().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        let s = HilbertSpace::detector(6).unwrap();
        let p = SystemParams::headline();
        assert!(build_full_hamiltonian(&p, false, &s).unwrap().is_hermitian(1e-12));
        assert!(build_full_hamiltonian(&p, true, &s).unwrap().is_hermitian(1e-12));
        assert!(build_dispersive_hamiltonian(&p, &s).unwrap().is_hermitian(1e-12));
    }

    #[test]
    fn dispersive_without_coupling_is_bare_detuning() {
        let s = HilbertSpace::atom_resonator(5).unwrap();
        let p = SystemParams {
            g: 0.0,
            ..SystemParams::headline()
        };
        let h = build_dispersive_hamiltonian(&p, &s).unwrap();
        let target = s.sigma(1, 1).unwrap().scale_re(p.delta1);
        assert!(max_abs_diff(h.matrix(), target.matrix()) < 1e-15);
        let degenerate = p.with_detunings(2.0, -2.0);
        assert!(matches!(
            build_dispersive_hamiltonian(&degenerate, &s),
            Err(Error::DegenerateDetuning)
        ));
    }

    #[test]
    fn amplitude_decay_generator() {
        let s = HilbertSpace::mode(ATOM, 3).unwrap();
        let m = LindbladModel::new(Operator::zero(&s), vec![(0.7, s.sigma(0, 1).unwrap())], None).unwrap();
        let rho = StateVector::basis(&s, &[1]).unwrap().to_density();
        let d = liouvillian_apply(&m, &rho).unwrap();
        let mut target = CMatrix::zeros(3, 3);
        target[(0, 0)] = C64::new(0.7, 0.0);
        target[(1, 1)] = C64::new(-0.7, 0.0);
        assert!(max_abs_diff(&d, &target) < 1e-15);
    }

    #[test]
    fn compiled_form_matches_textbook_form() {
        let s = HilbertSpace::detector(4).unwrap();
        let p = SystemParams::headline().with_kappa(0.05).with_dephasing(0.02);
        let m = interaction_model(&p, HamiltonianKind::Full, &s).unwrap();
        let d = s.dim();
        // Arbitrary (non-physical) dense input exercises every entry.
        let rho = CMatrix::from_fn(d, d, |i, j| C64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + 2 * j) % 5) as f64));
        let fast = m.compile().apply(&rho);
        let slow = textbook_rhs(&m, &rho);
        assert!(max_abs_diff(&fast, &slow) < 1e-10, "{}", max_abs_diff(&fast, &slow));
    }

    #[test]
    fn space_mismatch_is_reported() {
        let s = HilbertSpace::detector(4).unwrap();
        let p = SystemParams::headline();
        let m = interaction_model(&p, HamiltonianKind::Full, &s).unwrap();
        let other = HilbertSpace::atom_resonator(4).unwrap();
        let rho = StateVector::basis(&other, &[0, 0]).unwrap().to_density();
        assert!(matches!(liouvillian_apply(&m, &rho), Err(Error::SpaceMismatch)));
    }
}
