//! Tensor-product Hilbert spaces, operators and states.
//!
//! The detector lives on `source (2) ⊗ atom (3) ⊗ resonator (N_cut)`, ordered
//! exactly like that. Basis index of `|s, a, n⟩` is `(s * 3 + a) * N_cut + n`
//! (row-major over the subsystem list), which every serialized operator follows.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const SOURCE: &str = "source";
pub const ATOM: &str = "atom";
pub const RESONATOR: &str = "resonator";

/// Tolerances a [`DensityMatrix`] must satisfy.
#[derive(Clone, Copy, Debug)]
pub struct StateTolerance {
    pub hermiticity: f64,
    pub trace: f64,
    pub eigenvalue: f64,
}

impl Default for StateTolerance {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            trace: 1e-8,
            eigenvalue: 1e-8,
        }
    }
}

impl StateTolerance {
    pub fn uniform(tol: f64) -> Self {
        Self {
            hermiticity: tol,
            trace: tol,
            eigenvalue: tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpace {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl HilbertSpace {
    pub fn new(subsystems: &[(&str, usize)]) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidParams("a Hilbert space needs at least one subsystem".into()));
        }
        let mut labels = Vec::with_capacity(subsystems.len());
        let mut dims = Vec::with_capacity(subsystems.len());
        for &(label, dim) in subsystems {
            if dim == 0 {
                return Err(Error::InvalidParams(format!("subsystem `{label}` has dimension 0")));
            }
            if labels.iter().any(|l: &String| l == label) {
                return Err(Error::InvalidParams(format!("duplicate subsystem label `{label}`")));
            }
            labels.push(label.to_string());
            dims.push(dim);
        }
        Ok(Self { dims, labels })
    }

    /// `source (2) ⊗ atom (3) ⊗ resonator (n_cut)`.
    pub fn detector(n_cut: usize) -> Result<Self> {
        check_cutoff(n_cut)?;
        Self::new(&[(SOURCE, 2), (ATOM, 3), (RESONATOR, n_cut)])
    }

    /// `atom (3) ⊗ resonator (n_cut)`: the probe-stage space.
    pub fn atom_resonator(n_cut: usize) -> Result<Self> {
        check_cutoff(n_cut)?;
        Self::new(&[(ATOM, 3), (RESONATOR, n_cut)])
    }

    pub fn mode(label: &str, dim: usize) -> Result<Self> {
        Self::new(&[(label, dim)])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn subsystem_dim(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.position(label)?])
    }

    pub fn has(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// The single-mode space of one subsystem.
    pub fn subsystem(&self, label: &str) -> Result<HilbertSpace> {
        let pos = self.position(label)?;
        Ok(Self {
            dims: vec![self.dims[pos]],
            labels: vec![self.labels[pos].clone()],
        })
    }

    /// The space with the listed subsystems only, in this space's order.
    pub fn restrict(&self, keep: &[&str]) -> Result<HilbertSpace> {
        for k in keep {
            self.position(k)?;
        }
        let mut dims = Vec::new();
        let mut labels = Vec::new();
        for (l, &d) in self.labels.iter().zip(&self.dims) {
            if keep.contains(&l.as_str()) {
                dims.push(d);
                labels.push(l.clone());
            }
        }
        if dims.is_empty() {
            return Err(Error::InvalidParams("cannot restrict to an empty set of subsystems".into()));
        }
        Ok(Self { dims, labels })
    }

    /// Decode a basis index into per-subsystem levels.
    pub fn levels(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    pub fn index_of(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.len(),
                found: levels.len(),
            });
        }
        let mut idx = 0;
        for (&l, &d) in levels.iter().zip(&self.dims) {
            if l >= d {
                return Err(Error::InvalidParams(format!("level {l} out of range for dimension {d}")));
            }
            idx = idx * d + l;
        }
        Ok(idx)
    }

    /// Evaluate a charge function on every basis state.
    pub fn charges(&self, charge: impl Fn(&[usize]) -> i64) -> Vec<i64> {
        (0..self.dim()).map(|i| charge(&self.levels(i))).collect()
    }

    pub fn annihilation(&self, label: &str) -> Result<Operator> {
        let d = self.subsystem_dim(label)?;
        self.local(label, &annihilation_matrix(d))
    }

    /// `|mu⟩⟨nu|` on the given subsystem.
    pub fn transition(&self, label: &str, mu: usize, nu: usize) -> Result<Operator> {
        let d = self.subsystem_dim(label)?;
        if mu >= d || nu >= d {
            return Err(Error::InvalidParams(format!("transition |{mu}><{nu}| outside dimension {d}")));
        }
        let mut m = CMatrix::zeros(d, d);
        m[(mu, nu)] = C64::new(1.0, 0.0);
        self.local(label, &m)
    }

    /// Atomic operator `σ_{mu nu} = |mu⟩⟨nu|`.
    pub fn sigma(&self, mu: usize, nu: usize) -> Result<Operator> {
        self.transition(ATOM, mu, nu)
    }

    /// Embed a local matrix on `label`, identity elsewhere.
    pub fn local(&self, label: &str, matrix: &CMatrix) -> Result<Operator> {
        let local_space = self.subsystem(label)?;
        let op = Operator::new(local_space, matrix.clone())?;
        embed(&op, label, self)
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .labels
            .iter()
            .zip(&self.dims)
            .map(|(l, d)| format!("{l}({d})"))
            .collect();
        write!(f, "{}", parts.join(" ⊗ "))
    }
}

fn check_cutoff(n_cut: usize) -> Result<()> {
    if n_cut < 2 {
        return Err(Error::InvalidParams(format!("Fock cutoff must be at least 2, got {n_cut}")));
    }
    Ok(())
}

pub fn annihilation_matrix(dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::identity(d, d),
        }
    }

    pub fn zero(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::zeros(d, d),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            space: self.space.clone(),
            matrix: &self.matrix * factor,
        }
    }

    pub fn scale_re(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        same_space(&self.space, &other.space)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs_diff(&self.matrix, &self.matrix.adjoint()) <= tol
    }

    /// `tr(A ρ)`.
    pub fn expectation(&self, rho: &DensityMatrix) -> Result<C64> {
        same_space(&self.space, &rho.space)?;
        Ok(trace_of_product(&self.matrix, &rho.matrix))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<CVector> {
        same_space(&self.space, &psi.space)?;
        Ok(&self.matrix * &psi.amplitudes)
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        self.matrix.clone().singular_values().max()
    }

    /// `exp(M)` of the underlying matrix, same space.
    pub fn exp(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.clone().exp(),
        }
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator product across different spaces");
        Operator {
            space: self.space.clone(),
            matrix: matmul(&self.matrix, &rhs.matrix),
        }
    }
}

/// Matrix product that skips the zero entries of `a`; operators here are mostly sparse.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    assert_eq!(k, b.nrows(), "matmul shape mismatch");
    let nnz = a.iter().filter(|z| z.re != 0.0 || z.im != 0.0).count();
    if nnz * 4 > n * k {
        return a * b;
    }
    let mut out = CMatrix::zeros(n, m);
    for kk in 0..k {
        for i in 0..n {
            let v = a[(i, kk)];
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            for j in 0..m {
                let bv = b[(kk, j)];
                if bv.re != 0.0 || bv.im != 0.0 {
                    out[(i, j)] += v * bv;
                }
            }
        }
    }
    out
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator sum across different spaces");
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator difference across different spaces");
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

/// Tensor `local_op` (acting on one subsystem) with identities on every other factor.
pub fn embed(local_op: &Operator, target: &str, space: &HilbertSpace) -> Result<Operator> {
    let pos = space.position(target)?;
    let d_target = space.dims[pos];
    let d_local = local_op.space.dim();
    if d_local != d_target {
        return Err(Error::DimensionMismatch {
            expected: d_target,
            found: d_local,
        });
    }
    let left: usize = space.dims[..pos].iter().product();
    let right: usize = space.dims[pos + 1..].iter().product();
    let m = kron(
        &kron(&CMatrix::identity(left, left), &local_op.matrix),
        &CMatrix::identity(right, right),
    );
    Operator::new(space.clone(), m)
}

#[derive(Clone, Debug)]
pub struct StateVector {
    space: HilbertSpace,
    amplitudes: CVector,
}

impl StateVector {
    /// Normalizes the amplitudes; fails on a zero vector.
    pub fn new(space: HilbertSpace, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        Ok(Self {
            space,
            amplitudes: amplitudes / C64::new(norm, 0.0),
        })
    }

    pub fn basis(space: &HilbertSpace, levels: &[usize]) -> Result<Self> {
        let idx = space.index_of(levels)?;
        let mut v = CVector::zeros(space.dim());
        v[idx] = C64::new(1.0, 0.0);
        Ok(Self {
            space: space.clone(),
            amplitudes: v,
        })
    }

    /// Product state over all subsystems, factors given in space order.
    pub fn product(space: &HilbertSpace, factors: &[StateVector]) -> Result<Self> {
        if factors.len() != space.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: space.dims.len(),
                found: factors.len(),
            });
        }
        let mut v = CVector::from_element(1, C64::new(1.0, 0.0));
        for (f, &d) in factors.iter().zip(&space.dims) {
            if f.amplitudes.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: f.amplitudes.len(),
                });
            }
            v = v.kronecker(&f.amplitudes);
        }
        Self::new(space.clone(), v)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        same_space(&self.space, &other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            space: self.space.clone(),
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validated construction (Hermitian, unit trace, positive semidefinite).
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(space, matrix, StateTolerance::default())
    }

    pub fn with_tolerance(space: HilbertSpace, matrix: CMatrix, tol: StateTolerance) -> Result<Self> {
        let rho = Self::new_unchecked(space, matrix)?;
        rho.check(tol)?;
        Ok(rho)
    }

    /// Shape-checked only. Numerical outputs go through here and are checked by the caller.
    pub fn new_unchecked(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn check(&self, tol: StateTolerance) -> Result<()> {
        let herm = max_abs_diff(&self.matrix, &self.matrix.adjoint());
        if herm > tol.hermiticity {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -tol.eigenvalue {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    /// Tensor product of states, factors given in space order.
    pub fn product(space: &HilbertSpace, factors: &[DensityMatrix]) -> Result<Self> {
        if factors.len() != space.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: space.dims.len(),
                found: factors.len(),
            });
        }
        let mut m = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for (f, &d) in factors.iter().zip(&space.dims) {
            if f.matrix.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: f.matrix.nrows(),
                });
            }
            m = kron(&m, &f.matrix);
        }
        Ok(Self {
            space: space.clone(),
            matrix: m,
        })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        trace_of_product(&self.matrix, &self.matrix).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitian_part(&self.matrix);
        SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn overlap(&self, psi: &StateVector) -> Result<f64> {
        same_space(&self.space, &psi.space)?;
        let v = &self.matrix * &psi.amplitudes;
        Ok(psi.amplitudes.dotc(&v).re)
    }

    /// `½‖ρ − σ‖_tr`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        same_space(&self.space, &other.space)?;
        Ok(0.5 * trace_norm(&(&self.matrix - &other.matrix)))
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &Operator) -> Result<DensityMatrix> {
        same_space(&self.space, &u.space)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &u.matrix * &self.matrix * u.matrix.adjoint(),
        })
    }

    /// Scale to unit trace.
    pub fn normalized(&self) -> DensityMatrix {
        let tr = self.trace().re;
        Self {
            space: self.space.clone(),
            matrix: &self.matrix / C64::new(tr, 0.0),
        }
    }

    /// Reduced state on a single kept subsystem.
    pub fn partial_trace(&self, keep: &str) -> Result<DensityMatrix> {
        self.partial_trace_keep(&[keep])
    }

    /// Reduced state on the listed subsystems (kept in this space's order).
    pub fn partial_trace_keep(&self, keep: &[&str]) -> Result<DensityMatrix> {
        let kept_space = self.space.restrict(keep)?;
        let kept_mask: Vec<bool> = self
            .space
            .labels
            .iter()
            .map(|l| keep.contains(&l.as_str()))
            .collect();
        let d = self.space.dim();
        let dk = kept_space.dim();
        let rest_dim = d / dk;
        // Group global indices by their traced-out part.
        let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(dk); rest_dim];
        for i in 0..d {
            let lv = self.space.levels(i);
            let (mut ki, mut ri) = (0usize, 0usize);
            for ((&l, &dim), &kept) in lv.iter().zip(&self.space.dims).zip(&kept_mask) {
                if kept {
                    ki = ki * dim + l;
                } else {
                    ri = ri * dim + l;
                }
            }
            groups[ri].push((i, ki));
        }
        let mut out = CMatrix::zeros(dk, dk);
        for g in &groups {
            for &(i, ki) in g {
                for &(j, kj) in g {
                    out[(ki, kj)] += self.matrix[(i, j)];
                }
            }
        }
        Ok(Self {
            space: kept_space,
            matrix: out,
        })
    }

    /// Trace out one subsystem.
    pub fn trace_out(&self, label: &str) -> Result<DensityMatrix> {
        self.space.position(label)?;
        let keep: Vec<&str> = self
            .space
            .labels
            .iter()
            .map(String::as_str)
            .filter(|l| *l != label)
            .collect();
        self.partial_trace_keep(&keep)
    }
}

/// Coherent state `|α⟩` on the resonator mode, truncated at the mode's cutoff and renormalized.
///
/// `space` may be the resonator mode itself or any space with a `resonator` subsystem;
/// the returned state lives on the single resonator mode.
pub fn coherent_state(alpha: C64, space: &HilbertSpace) -> Result<StateVector> {
    let mode = resonator_mode(space)?;
    let n_cut = mode.dim();
    check_amplitude(alpha, n_cut)?;
    let mut amps = CVector::zeros(n_cut);
    let prefactor = (-0.5 * alpha.norm_sqr()).exp();
    // αⁿ/√(n!) by recurrence.
    let mut term = C64::new(prefactor, 0.0);
    amps[0] = term;
    for n in 1..n_cut {
        term = term * alpha / (n as f64).sqrt();
        amps[n] = term;
    }
    StateVector::new(mode, amps)
}

/// `D(α) = exp(α a† − α* a)` on the truncated mode, embedded on the resonator.
pub fn displacement_operator(alpha: C64, space: &HilbertSpace) -> Result<Operator> {
    let mode = resonator_mode(space)?;
    let n_cut = mode.dim();
    check_amplitude(alpha, n_cut)?;
    let a = annihilation_matrix(n_cut);
    let gen = a.adjoint() * alpha - &a * alpha.conj();
    let local = Operator::new(mode.clone(), gen.exp())?;
    if space.dims.len() == 1 {
        Ok(local)
    } else {
        embed(&local, &mode.labels[0], space)
    }
}

fn resonator_mode(space: &HilbertSpace) -> Result<HilbertSpace> {
    if space.dims.len() == 1 {
        Ok(space.clone())
    } else {
        space.subsystem(RESONATOR)
    }
}

fn check_amplitude(alpha: C64, n_cut: usize) -> Result<()> {
    let limit = n_cut as f64 / 4.0;
    let alpha_sq = alpha.norm_sqr();
    if !alpha_sq.is_finite() || alpha_sq > limit {
        return Err(Error::TruncationOverflow { alpha_sq, limit });
    }
    Ok(())
}

pub(crate) fn same_space(a: &HilbertSpace, b: &HilbertSpace) -> Result<()> {
    if a != b {
        return Err(Error::SpaceMismatch);
    }
    Ok(())
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `tr(AB)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Sum of absolute eigenvalues of the Hermitian part of `m`.
pub fn trace_norm(m: &CMatrix) -> f64 {
    SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .map(|e| e.abs())
        .sum()
}
