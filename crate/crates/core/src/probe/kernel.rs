//! First-order stochastic kernel on the charge-diagonal blocks.
//!
//! The probe generator, the measurement operator and the current `⟨O + O†⟩` all
//! respect the charge `n + [atom = 2]`, and off-diagonal charge blocks never feed
//! diagonal ones. The record is therefore reproduced exactly by evolving only the
//! `P = P'` blocks, each of dimension at most 3 × 3.
//!
//! One step applies the generator without the measured channel's `OρO†` term,
//! then the Kraus update `ρ → MρM†/tr` with `M = I + O dY`, `dY = ⟨O + O†⟩dt + dW`.
//! This agrees with Euler–Maruyama to first order (`O² = 0` for a lowering
//! operator, so no second-order correction appears) and keeps ρ positive.
//!
//! Every map involved preserves Hermiticity, so trajectories run on the real
//! coordinates of each block (diagonal, then real and imaginary parts above it),
//! padded to a fixed width.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, DensityMatrix, HilbertSpace, C64};
use crate::lindblad::sector::{excitation_charges, SectorOptions, SectorPropagator};
use crate::lindblad::CompiledModel;

/// Initial block populations below this are dropped.
pub(crate) const PROBE_PRUNE: f64 = 1e-14;
/// Steps between positivity checks.
const CHECK_EVERY: usize = 1000;
pub(crate) const POSITIVITY_LIMIT: f64 = -1e-3;

/// Real coordinates per padded block: a 3 × 3 Hermitian matrix.
const W: usize = 9;
type Slot = [f64; W];
/// Column-major `W × W`.
type Mat = [[f64; W]; W];

#[inline(always)]
fn gemv_acc(m: &Mat, x: &Slot, y: &mut Slot) {
    for (col, &xj) in m.iter().zip(x) {
        for (yi, &mij) in y.iter_mut().zip(col) {
            *yi += mij * xj;
        }
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Diag(usize),
    /// Element indices of `(i, j)` and `(j, i)`, `i < j`.
    Re(usize, usize),
    Im(usize, usize),
}

struct BlockLayout {
    offset: usize,
    size: usize,
    /// Local `(row, col)` for each element of the block.
    local: Vec<(usize, usize)>,
    dim: usize,
}

pub(crate) struct BranchKernel {
    /// Full probe generator, for the deterministic evolution.
    prop: SectorPropagator,
    coords: Vec<Coord>,
    /// Padded position `block * W + slot` of every coordinate.
    pos: Vec<usize>,
    n_blocks: usize,
    /// Real form of `exp(A dt)` without the measured sandwich term, per block.
    step_diag: Vec<Mat>,
    /// `dt G`, the inflow between blocks, on flat padded positions.
    step_cross: Vec<(u32, u32, f64)>,
    /// Real forms of `x ↦ O x + x O†` and `x ↦ O x O†` on flat padded positions.
    backaction: Vec<(u32, u32, f64)>,
    sandwich: Vec<(u32, u32, f64)>,
    /// `⟨O + O†⟩` weights, complex and padded real forms.
    current: Vec<(usize, C64)>,
    current_real: Vec<Slot>,
    trace_real: Vec<Slot>,
    layouts: Vec<BlockLayout>,
    dt: f64,
}

impl BranchKernel {
    pub(crate) fn new(
        compiled: &CompiledModel,
        split: &CompiledModel,
        space: &HilbertSpace,
        measurement: &CMatrix,
        rho0: &CMatrix,
        dt: f64,
    ) -> Result<Self> {
        let charges = excitation_charges(space)?;
        let opts = SectorOptions {
            step: dt,
            prune_tol: PROBE_PRUNE,
            diagonal_only: true,
        };
        let prop = SectorPropagator::new(compiled, space.clone(), &charges, rho0, opts)?;
        let split = SectorPropagator::new(split, space.clone(), &charges, rho0, opts)?;
        if split.elements() != prop.elements() {
            return Err(Error::InvariantViolation("split generator reaches a different element set".into()));
        }
        let dim = space.dim();
        let elements = prop.elements();
        let n = elements.len();
        let mut index = vec![usize::MAX; dim * dim];
        for (k, &(i, j)) in elements.iter().enumerate() {
            index[i + j * dim] = k;
        }
        let lookup = |i: usize, j: usize| Some(index[i + j * dim]).filter(|&k| k != usize::MAX);

        let mut o_entries = Vec::new();
        for k in 0..dim {
            for i in 0..dim {
                let v = measurement[(i, k)];
                if v.norm() > 0.0 {
                    if charges[i] != charges[k] {
                        return Err(Error::NotChargeConserving("measurement operator mixes charges".into()));
                    }
                    o_entries.push((i, k, v));
                }
            }
        }
        let mut backaction = Vec::new();
        let mut sandwich = Vec::new();
        for (src, &(k, l)) in elements.iter().enumerate() {
            // (O ρ)_il += O_ik ρ_kl
            for &(i, _, v) in o_entries.iter().filter(|e| e.1 == k) {
                if let Some(t) = lookup(i, l) {
                    backaction.push((t, src, v));
                }
                // (O ρ O†)_ij += O_ik ρ_kl conj(O_jl)
                for &(j, _, w) in o_entries.iter().filter(|e| e.1 == l) {
                    if let Some(t) = lookup(i, j) {
                        sandwich.push((t, src, v * w.conj()));
                    }
                }
            }
            // (ρ O†)_kj += ρ_kl conj(O_jl)
            for &(j, _, v) in o_entries.iter().filter(|e| e.1 == l) {
                if let Some(t) = lookup(k, j) {
                    backaction.push((t, src, v.conj()));
                }
            }
        }
        // ⟨O + O†⟩ = 2 Re Σ O_ik ρ_ki
        let current: Vec<(usize, C64)> = o_entries
            .iter()
            .filter_map(|&(i, k, v)| lookup(k, i).map(|m| (m, v * 2.0)))
            .collect();

        // Real coordinates, grouped by block.
        let ranges: Vec<(usize, usize)> = prop.block_ranges().collect();
        let mut coords = Vec::new();
        let mut pos = Vec::new();
        for (b, &(offset, size)) in ranges.iter().enumerate() {
            let mut slot = 0;
            for k in offset..offset + size {
                let (i, j) = elements[k];
                let new: Vec<Coord> = if i == j {
                    vec![Coord::Diag(k)]
                } else if i < j {
                    let t = lookup(j, i).ok_or_else(|| Error::InvariantViolation("unpaired block element".into()))?;
                    vec![Coord::Re(k, t), Coord::Im(k, t)]
                } else {
                    vec![]
                };
                for c in new {
                    if slot == W {
                        return Err(Error::InvariantViolation(format!("probe block wider than {W} coordinates")));
                    }
                    coords.push(c);
                    pos.push(b * W + slot);
                    slot += 1;
                }
            }
        }
        let n_blocks = ranges.len();
        let zero = C64::new(0.0, 0.0);
        let embed_unit = |k: usize| {
            let mut x = vec![zero; n];
            write_coord(&mut x, coords[k], 1.0);
            x
        };
        let apply_triplets = |t: &[(usize, usize, C64)], x: &[C64]| {
            let mut y = vec![zero; n];
            for &(a, b, c) in t {
                y[a] += c * x[b];
            }
            y
        };
        let empty = [[0.0; W]; W];
        let mut step_diag = vec![empty; n_blocks];
        let mut cross: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut back = Vec::new();
        let mut sand = Vec::new();
        for k in 0..coords.len() {
            let (bk, sk) = (pos[k] / W, pos[k] % W);
            let x = embed_unit(k);
            let mut ex = vec![zero; n];
            let mut gx = vec![zero; n];
            split.apply_exp(&x, &mut ex);
            split.apply_inflow(&x, &mut gx);
            for (r, v) in extract(&coords, &ex).into_iter().enumerate() {
                if v != 0.0 {
                    if pos[r] / W != bk {
                        return Err(Error::InvariantViolation("block exponential leaves its block".into()));
                    }
                    step_diag[bk][sk][pos[r] % W] = v;
                }
            }
            for (r, v) in extract(&coords, &gx).into_iter().enumerate() {
                if v != 0.0 {
                    if pos[r] / W == bk {
                        step_diag[bk][sk][pos[r] % W] += v * dt;
                    } else {
                        *cross.entry((pos[r], pos[k])).or_insert(0.0) += v * dt;
                    }
                }
            }
            for (map, out) in [(&backaction, &mut back), (&sandwich, &mut sand)] {
                for (r, v) in extract(&coords, &apply_triplets(map, &x)).into_iter().enumerate() {
                    if v != 0.0 {
                        out.push((pos[r] as u32, pos[k] as u32, v));
                    }
                }
            }
        }
        let mut current_real = vec![[0.0; W]; n_blocks];
        let mut trace_real = vec![[0.0; W]; n_blocks];
        for (k, &c) in coords.iter().enumerate() {
            let x = embed_unit(k);
            current_real[pos[k] / W][pos[k] % W] = current.iter().map(|&(m, w)| (w * x[m]).re).sum();
            if matches!(c, Coord::Diag(_)) {
                trace_real[pos[k] / W][pos[k] % W] = 1.0;
            }
        }
        let layouts = ranges
            .iter()
            .map(|&(offset, size)| {
                let mut states: Vec<usize> = elements[offset..offset + size].iter().map(|e| e.0).collect();
                states.sort_unstable();
                states.dedup();
                let local = elements[offset..offset + size]
                    .iter()
                    .map(|&(i, j)| {
                        let a = states.binary_search(&i).expect("row state");
                        let b = states.binary_search(&j).expect("col state");
                        (a, b)
                    })
                    .collect();
                BlockLayout {
                    offset,
                    size,
                    local,
                    dim: states.len(),
                }
            })
            .collect();
        Ok(Self {
            prop,
            coords,
            pos,
            n_blocks,
            step_diag,
            step_cross: cross.into_iter().map(|((t, s), v)| (t as u32, s as u32, v)).collect(),
            backaction: back,
            sandwich: sand,
            current,
            current_real,
            trace_real,
            layouts,
            dt,
        })
    }

    pub(crate) fn mean_current(&self, x: &[C64]) -> f64 {
        self.current.iter().map(|&(m, w)| (w * x[m]).re).sum()
    }

    /// Smallest eigenvalue over all blocks.
    pub(crate) fn min_eigenvalue(&self, x: &[C64]) -> f64 {
        let mut min = f64::INFINITY;
        for b in &self.layouts {
            let mut m = DMatrix::<C64>::zeros(b.dim, b.dim);
            for (&(r, c), v) in b.local.iter().zip(&x[b.offset..b.offset + b.size]) {
                m[(r, c)] = *v;
            }
            let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            for e in h.symmetric_eigenvalues().iter() {
                min = min.min(*e);
            }
        }
        min
    }

    /// Deterministic mean currents `Ī(t_k)`, `t_k = k dt`, for `k < n_steps`.
    pub(crate) fn reference_current(&self, n_steps: usize) -> Vec<f64> {
        let mut prop = self.prop.clone();
        let mut out = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            out.push(self.mean_current(prop.values()));
            prop.step();
        }
        out
    }

    /// Deterministic state after `n_steps`, restricted to the diagonal blocks.
    pub(crate) fn deterministic_state(&self, n_steps: usize) -> Result<DensityMatrix> {
        let mut prop = self.prop.clone();
        prop.advance(n_steps);
        self.to_state(prop.values())
    }

    pub(crate) fn initial(&self) -> Vec<C64> {
        self.prop.values().to_vec()
    }

    pub(crate) fn to_state(&self, x: &[C64]) -> Result<DensityMatrix> {
        let dim = self.prop.space().dim();
        let mut m = CMatrix::zeros(dim, dim);
        for (&(i, j), &v) in self.prop.elements().iter().zip(x) {
            m[(i, j)] = v;
        }
        DensityMatrix::new_unchecked(self.prop.space().clone(), m)
    }

    fn pack(&self, x: &[C64]) -> Vec<Slot> {
        let mut r = vec![[0.0; W]; self.n_blocks];
        for (v, &p) in extract(&self.coords, x).into_iter().zip(&self.pos) {
            r[p / W][p % W] = v;
        }
        r
    }

    fn unpack(&self, r: &[Slot]) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); self.prop.n_elements()];
        for (&c, &p) in self.coords.iter().zip(&self.pos) {
            write_coord(&mut x, c, r[p / W][p % W]);
        }
        x
    }

    /// Integrates one trajectory. `noise` yields standard normal samples and
    /// `observe(k, e_k, dW_k)` sees the mean current before step `k` and its increment.
    pub(crate) fn integrate(
        &self,
        x: &mut Vec<C64>,
        n_steps: usize,
        mut noise: impl FnMut() -> f64,
        mut observe: impl FnMut(usize, f64, f64),
    ) -> Result<()> {
        let mut r = self.pack(x);
        let mut a = vec![[0.0; W]; self.n_blocks];
        let sqrt_dt = self.dt.sqrt();
        for k in 0..n_steps {
            let e = dot(&self.current_real, &r);
            let dw = sqrt_dt * noise();
            observe(k, e, dw);
            let dy = e * self.dt + dw;
            let dy2 = dy * dy;
            for (ab, (m, rb)) in a.iter_mut().zip(self.step_diag.iter().zip(&r)) {
                *ab = [0.0; W];
                gemv_acc(m, rb, ab);
            }
            {
                let (rf, af) = (r.as_flattened(), a.as_flattened_mut());
                for &(t, s, v) in &self.step_cross {
                    af[t as usize] += v * rf[s as usize];
                }
            }
            // r = M a M†
            r.copy_from_slice(&a);
            {
                let (rf, af) = (r.as_flattened_mut(), a.as_flattened());
                for &(t, s, v) in &self.backaction {
                    rf[t as usize] += dy * v * af[s as usize];
                }
                for &(t, s, v) in &self.sandwich {
                    rf[t as usize] += dy2 * v * af[s as usize];
                }
            }
            let tr = dot(&self.trace_real, &r);
            if !(tr > 0.0) || !tr.is_finite() {
                return Err(Error::PositivityBreakdown {
                    t: (k + 1) as f64 * self.dt,
                    min_eigenvalue: f64::NAN,
                });
            }
            let inv = 1.0 / tr;
            r.iter_mut().flatten().for_each(|v| *v *= inv);
            if (k + 1) % CHECK_EVERY == 0 || k + 1 == n_steps {
                let min = self.min_eigenvalue(&self.unpack(&r));
                if min < POSITIVITY_LIMIT {
                    return Err(Error::PositivityBreakdown {
                        t: (k + 1) as f64 * self.dt,
                        min_eigenvalue: min,
                    });
                }
            }
        }
        *x = self.unpack(&r);
        Ok(())
    }
}

fn dot(w: &[Slot], r: &[Slot]) -> f64 {
    w.iter().zip(r).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum()
}

fn write_coord(x: &mut [C64], c: Coord, v: f64) {
    match c {
        Coord::Diag(k) => x[k] += C64::new(v, 0.0),
        Coord::Re(k, t) => {
            x[k] += C64::new(v, 0.0);
            x[t] += C64::new(v, 0.0);
        }
        Coord::Im(k, t) => {
            x[k] += C64::new(0.0, v);
            x[t] += C64::new(0.0, -v);
        }
    }
}

fn extract(coords: &[Coord], x: &[C64]) -> Vec<f64> {
    coords
        .iter()
        .map(|&c| match c {
            Coord::Diag(k) => x[k].re,
            Coord::Re(k, t) => 0.5 * (x[k].re + x[t].re),
            Coord::Im(k, t) => 0.5 * (x[k].im - x[t].im),
        })
        .collect()
}
