//! Block propagator for generators that conserve an integer charge.
//!
//! With `H_eff` block-diagonal in a charge `q` and every jump term `X ρ Y†` lowering
//! both sides by the same amount, the element `ρ_ij` only ever feeds elements whose
//! charge pair `(q_i, q_j)` is equal or shifted down by that amount. Each `(P, P')`
//! block is propagated with its exact exponential; the slow inflow from higher blocks
//! is integrated with fourth-order Lawson Runge–Kutta.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, DensityMatrix, HilbertSpace, ATOM, C64, RESONATOR};

use super::model::{CompiledModel, LindbladModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorOptions {
    /// Lawson step.
    pub step: f64,
    /// A block `(P, P')` is dropped when `sqrt(W_P W_P') < prune_tol`, with `W_P` the
    /// initial population at charge `≥ P`. Populations only flow downwards, so this
    /// bounds every element of the dropped block for all times.
    pub prune_tol: f64,
    /// Keep only `P = P'` blocks. Exact for every observable that is diagonal in the
    /// charge, since off-diagonal blocks never feed diagonal ones.
    pub diagonal_only: bool,
}

impl Default for SectorOptions {
    fn default() -> Self {
        Self {
            step: 0.25,
            prune_tol: 1e-12,
            diagonal_only: false,
        }
    }
}

/// `p = n + [atom = 2]` on any space holding an atom and a resonator.
pub fn excitation_charges(space: &HilbertSpace) -> Result<Vec<i64>> {
    let a = space.position(ATOM)?;
    let r = space.position(RESONATOR)?;
    Ok(space.charges(|lv| lv[r] as i64 + i64::from(lv[a] == 2)))
}

#[derive(Clone, Debug)]
struct Block {
    offset: usize,
    size: usize,
    /// Column-major `exp(A h)` and `exp(A h / 2)`.
    exp_full: Vec<C64>,
    exp_half: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct SectorPropagator {
    space: HilbertSpace,
    dim: usize,
    charges: Vec<i64>,
    h: f64,
    t: f64,
    /// `(row, col)` of every stored element.
    elements: Vec<(usize, usize)>,
    blocks: Vec<Block>,
    /// `(target, source, coefficient)` couplings between blocks.
    inflow: Vec<(usize, usize, C64)>,
    y: Vec<C64>,
    work: [Vec<C64>; 8],
}

struct Adjacency {
    h_cols: Vec<Vec<(usize, C64)>>,
    pieces: Vec<(f64, Vec<Vec<(usize, C64)>>, Vec<Vec<(usize, C64)>>)>,
}

impl Adjacency {
    fn new(m: &CompiledModel) -> Self {
        let cols = |op: &super::model::SparseOp| {
            let mut c = vec![Vec::new(); m.dim];
            for &(i, k, v) in &op.entries {
                c[k].push((i, v));
            }
            c
        };
        Self {
            h_cols: cols(&m.h_eff),
            pieces: m.pieces.iter().map(|p| (p.coef, cols(&p.left), cols(&p.right))).collect(),
        }
    }

    /// Calls `f(i, j, coef)` for every term `dρ_ij/dt += coef · ρ_kl`.
    fn for_each_target(&self, k: usize, l: usize, mut f: impl FnMut(usize, usize, C64)) {
        let mi = C64::new(0.0, -1.0);
        for &(i, v) in &self.h_cols[k] {
            f(i, l, mi * v);
        }
        for &(j, v) in &self.h_cols[l] {
            f(k, j, -mi * v.conj());
        }
        for (c, x, y) in &self.pieces {
            for &(i, v) in &x[k] {
                for &(j, w) in &y[l] {
                    f(i, j, v * w.conj() * *c);
                }
            }
        }
    }
}

fn shift_of(op: &super::model::SparseOp, q: &[i64], what: &str) -> Result<Option<i64>> {
    let mut shift = None;
    for &(i, k, _) in &op.entries {
        let d = q[i] - q[k];
        match shift {
            None => shift = Some(d),
            Some(s) if s != d => {
                return Err(Error::NotChargeConserving(format!("{what} mixes charge shifts {s} and {d}")))
            }
            _ => {}
        }
    }
    Ok(shift)
}

impl SectorPropagator {
    pub fn from_model(model: &LindbladModel, charges: &[i64], rho0: &DensityMatrix, opts: SectorOptions) -> Result<Self> {
        crate::hilbert::same_space(model.space(), rho0.space())?;
        Self::new(&model.compile(), model.space().clone(), charges, rho0.matrix(), opts)
    }

    pub fn new(
        model: &CompiledModel,
        space: HilbertSpace,
        charges: &[i64],
        rho0: &CMatrix,
        opts: SectorOptions,
    ) -> Result<Self> {
        let dim = model.dim;
        if charges.len() != dim || rho0.nrows() != dim || space.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: charges.len(),
            });
        }
        if !(opts.step > 0.0) || !opts.step.is_finite() {
            return Err(Error::InvalidParams(format!("sector step must be positive, got {}", opts.step)));
        }
        let q = charges;
        for &(i, k, _) in &model.h_eff.entries {
            if q[i] != q[k] {
                return Err(Error::NotChargeConserving(format!(
                    "effective Hamiltonian couples charges {} and {}",
                    q[k], q[i]
                )));
            }
        }
        for (n, p) in model.pieces.iter().enumerate() {
            let dl = shift_of(&p.left, q, "jump operator")?;
            let dr = shift_of(&p.right, q, "jump operator")?;
            if let (Some(a), Some(b)) = (dl, dr) {
                if a != b || a > 0 {
                    return Err(Error::NotChargeConserving(format!(
                        "jump term {n} shifts the charge by ({a}, {b})"
                    )));
                }
            }
        }

        // Reachable elements from the initial support.
        let adj = Adjacency::new(model);
        let mut seen = vec![false; dim * dim];
        let mut queue = VecDeque::new();
        for j in 0..dim {
            for i in 0..dim {
                if rho0[(i, j)].norm() > 0.0 {
                    seen[i + j * dim] = true;
                    queue.push_back((i, j));
                }
            }
        }
        while let Some((k, l)) = queue.pop_front() {
            adj.for_each_target(k, l, |i, j, _| {
                if !seen[i + j * dim] {
                    seen[i + j * dim] = true;
                    queue.push_back((i, j));
                }
            });
        }

        // Tail populations per charge.
        let q_min = *q.iter().min().unwrap_or(&0);
        let q_max = *q.iter().max().unwrap_or(&0);
        let span = (q_max - q_min + 1) as usize;
        let mut tail = vec![0.0; span + 1];
        for i in 0..dim {
            tail[(q[i] - q_min) as usize] += rho0[(i, i)].re.max(0.0);
        }
        for c in (0..span).rev() {
            tail[c] += tail[c + 1];
        }
        let weight = |c: i64| tail[(c - q_min) as usize];

        // Group kept elements by block.
        let mut by_block: std::collections::BTreeMap<(i64, i64), Vec<(usize, usize)>> = Default::default();
        for j in 0..dim {
            for i in 0..dim {
                if !seen[i + j * dim] || q[i] < q[j] {
                    continue;
                }
                if opts.diagonal_only && q[i] != q[j] {
                    continue;
                }
                if (weight(q[i]) * weight(q[j])).sqrt() < opts.prune_tol {
                    continue;
                }
                by_block.entry((q[i], q[j])).or_default().push((i, j));
            }
        }
        let mut index = vec![usize::MAX; dim * dim];
        let mut elements = Vec::new();
        let mut ranges = Vec::new();
        for elems in by_block.values() {
            let offset = elements.len();
            for &(i, j) in elems {
                index[i + j * dim] = elements.len();
                elements.push((i, j));
            }
            ranges.push((offset, elems.len()));
        }
        let mut block_of = vec![0usize; elements.len()];
        for (b, &(o, s)) in ranges.iter().enumerate() {
            block_of[o..o + s].fill(b);
        }

        let mut gens: Vec<CMatrix> = ranges.iter().map(|&(_, s)| CMatrix::zeros(s, s)).collect();
        let mut inflow = Vec::new();
        for (src, &(k, l)) in elements.iter().enumerate() {
            let bs = block_of[src];
            adj.for_each_target(k, l, |i, j, c| {
                let tgt = index[i + j * dim];
                if tgt == usize::MAX {
                    return;
                }
                let bt = block_of[tgt];
                if bt == bs {
                    let o = ranges[bt].0;
                    gens[bt][(tgt - o, src - o)] += c;
                } else {
                    inflow.push((tgt, src, c));
                }
            });
        }
        let h = opts.step;
        let blocks = ranges
            .iter()
            .zip(gens)
            .map(|(&(offset, size), g)| {
                let exp_half = (&g * C64::new(0.5 * h, 0.0)).exp();
                let exp_full = &exp_half * &exp_half;
                Block {
                    offset,
                    size,
                    exp_full: exp_full.as_slice().to_vec(),
                    exp_half: exp_half.as_slice().to_vec(),
                }
            })
            .collect();
        let y: Vec<C64> = elements.iter().map(|&(i, j)| rho0[(i, j)]).collect();
        let n = y.len();
        Ok(Self {
            space,
            dim,
            charges: q.to_vec(),
            h,
            t: 0.0,
            elements,
            blocks,
            inflow,
            y,
            work: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    fn exp_apply(blocks: &[Block], half: bool, x: &[C64], out: &mut [C64]) {
        for b in blocks {
            let e = if half { &b.exp_half } else { &b.exp_full };
            let n = b.size;
            let xs = &x[b.offset..b.offset + n];
            let os = &mut out[b.offset..b.offset + n];
            os.fill(C64::new(0.0, 0.0));
            for (col, &xc) in e.chunks_exact(n).zip(xs) {
                for (o, &v) in os.iter_mut().zip(col) {
                    *o += v * xc;
                }
            }
        }
    }

    fn inflow_apply(inflow: &[(usize, usize, C64)], x: &[C64], out: &mut [C64]) {
        out.fill(C64::new(0.0, 0.0));
        for &(t, s, c) in inflow {
            out[t] += c * x[s];
        }
    }

    /// Advances by one Lawson step.
    pub fn step(&mut self) {
        let h = self.h;
        let [k1, k2, k3, k4, ey, a, b, c] = &mut self.work;
        let y = &mut self.y;
        if self.inflow.is_empty() {
            Self::exp_apply(&self.blocks, false, y, ey);
            y.copy_from_slice(ey);
            self.t += h;
            return;
        }
        let hh = C64::new(0.5 * h, 0.0);
        Self::inflow_apply(&self.inflow, y, k1);
        for ((ai, &yi), &ki) in a.iter_mut().zip(y.iter()).zip(k1.iter()) {
            *ai = yi + hh * ki;
        }
        Self::exp_apply(&self.blocks, true, a, b);
        Self::inflow_apply(&self.inflow, b, k2);
        Self::exp_apply(&self.blocks, true, y, b);
        for ((ai, &bi), &ki) in a.iter_mut().zip(b.iter()).zip(k2.iter()) {
            *ai = bi + hh * ki;
        }
        Self::inflow_apply(&self.inflow, a, k3);
        Self::exp_apply(&self.blocks, false, y, ey);
        Self::exp_apply(&self.blocks, true, k3, c);
        for ((ai, &ei), &ci) in a.iter_mut().zip(ey.iter()).zip(c.iter()) {
            *ai = ei + C64::new(h, 0.0) * ci;
        }
        Self::inflow_apply(&self.inflow, a, k4);
        // y+ = E y + h/6 (E k1 + 2 E2 (k2 + k3) + k4)
        for (bi, (&k2i, &k3i)) in b.iter_mut().zip(k2.iter().zip(k3.iter())) {
            *bi = k2i + k3i;
        }
        Self::exp_apply(&self.blocks, true, b, c);
        Self::exp_apply(&self.blocks, false, k1, a);
        let s = C64::new(h / 6.0, 0.0);
        for i in 0..y.len() {
            y[i] = ey[i] + s * (a[i] + c[i] * 2.0 + k4[i]);
        }
        self.t += h;
    }

    pub fn advance(&mut self, n_steps: usize) {
        for _ in 0..n_steps {
            self.step();
        }
    }

    /// Advances to the nearest step boundary at or after `t`.
    pub fn advance_to(&mut self, t: f64) {
        let n = ((t - self.t) / self.h - 1e-9).ceil();
        if n > 0.0 {
            self.advance(n as usize);
        }
    }

    pub fn trace(&self) -> f64 {
        self.elements
            .iter()
            .zip(&self.y)
            .filter(|((i, j), _)| i == j)
            .map(|(_, v)| v.re)
            .sum()
    }

    /// Full density matrix; elements outside the stored set are zero.
    pub fn matrix(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (&(i, j), &v) in self.elements.iter().zip(&self.y) {
            m[(i, j)] = v;
            if self.charges[i] != self.charges[j] {
                m[(j, i)] = v.conj();
            }
        }
        m
    }

    pub fn state(&self) -> Result<DensityMatrix> {
        DensityMatrix::new_unchecked(self.space.clone(), self.matrix())
    }

    /// Iterates over stored `(row, col, value)` entries; the mirrored half is implied.
    pub fn stored(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.elements.iter().zip(&self.y).map(|(&(i, j), &v)| (i, j, v))
    }

    pub(crate) fn elements(&self) -> &[(usize, usize)] {
        &self.elements
    }

    pub(crate) fn values(&self) -> &[C64] {
        &self.y
    }

    pub(crate) fn block_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks.iter().map(|b| (b.offset, b.size))
    }

    /// `out = exp(A h) x` blockwise.
    pub(crate) fn apply_exp(&self, x: &[C64], out: &mut [C64]) {
        Self::exp_apply(&self.blocks, false, x, out);
    }

    /// `out = G x` with `G` the inter-block inflow.
    pub(crate) fn apply_inflow(&self, x: &[C64], out: &mut [C64]) {
        Self::inflow_apply(&self.inflow, x, out);
    }
}
