//! Homodyne probe stage: stochastic trajectories, matched filtering and thresholding.

mod dense;
mod kernel;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{same_space, DensityMatrix, HilbertSpace};
use crate::lindblad::{measurement_operator, probe_model, HamiltonianKind, SystemParams};

pub use dense::{dense_trajectory, DenseTrajectory};
use kernel::BranchKernel;

/// Counter-based noise stream for trajectory `index` of `branch`.
pub fn noise_rng(base_seed: u64, branch: u8, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream((u64::from(branch) << 48) | index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub branch: u8,
    /// Trajectory index; the noise stream is `(base_seed, branch, seed)`.
    pub seed: u64,
    /// Filtered integrated current.
    pub s: f64,
    /// Current averaged over consecutive windows, when requested.
    pub current_samples: Option<Vec<f64>>,
}

/// Mean currents `Ī0`, `Ī1` on the grid `t_k = k dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCurrents {
    pub dt: f64,
    pub i0: Vec<f64>,
    pub i1: Vec<f64>,
}

impl ReferenceCurrents {
    /// `h(t_k) = |Ī0(t_k) − Ī1(t_k)|`.
    pub fn filter(&self) -> Vec<f64> {
        self.i0.iter().zip(&self.i1).map(|(a, b)| (a - b).abs()).collect()
    }

    /// `∫ |Ī0 − Ī1|² dt`.
    pub fn separation(&self) -> f64 {
        self.i0.iter().zip(&self.i1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * self.dt
    }

    /// `∫ Ī_branch h dt`, the expected value of `S` in that branch.
    pub fn expected_s(&self, branch: u8) -> f64 {
        let i = if branch == 0 { &self.i0 } else { &self.i1 };
        i.iter().zip(self.filter()).map(|(a, h)| a * h).sum::<f64>() * self.dt
    }
}

/// `S = Σ_k I(t_k) h(t_k) dt` with `h = |Ī0 − Ī1|`.
pub fn matched_filter_and_integrate(current: &[f64], i0: &[f64], i1: &[f64], dt: f64) -> Result<f64> {
    for other in [i0.len(), i1.len()] {
        if other != current.len() {
            return Err(Error::GridMismatch {
                left: current.len(),
                right: other,
            });
        }
    }
    Ok(current
        .iter()
        .zip(i0.iter().zip(i1))
        .map(|(c, (a, b))| c * (a - b).abs())
        .sum::<f64>()
        * dt)
}

/// Mean currents of the two branches under the deterministic probe master equation.
pub fn reference_currents(
    p: &SystemParams,
    kind: HamiltonianKind,
    rho_init_0: &DensityMatrix,
    rho_init_1: &DensityMatrix,
) -> Result<ReferenceCurrents> {
    Ok(ProbeContext::new(p, kind, rho_init_0, rho_init_1)?.reference().clone())
}

/// Shared, immutable probe-stage setup for both branches.
pub struct ProbeContext {
    params: SystemParams,
    kernels: [BranchKernel; 2],
    reference: ReferenceCurrents,
    filter: Vec<f64>,
    n_steps: usize,
}

impl ProbeContext {
    /// `rho_init_*` live on atom ⊗ resonator.
    pub fn new(
        p: &SystemParams,
        kind: HamiltonianKind,
        rho_init_0: &DensityMatrix,
        rho_init_1: &DensityMatrix,
    ) -> Result<Self> {
        p.validate()?;
        let space = HilbertSpace::atom_resonator(p.n_cut)?;
        same_space(&space, rho_init_0.space())?;
        same_space(&space, rho_init_1.space())?;
        if !(p.gamma01 > 0.0) {
            return Err(Error::InvalidParams("the measured channel needs gamma01 > 0".into()));
        }
        let model = probe_model(p, kind, &space)?;
        let compiled = model.compile();
        // The measured channel leads the collapse list; its sandwich term comes from the Kraus update.
        let mut split = compiled.clone();
        split.pieces.remove(0);
        let o = measurement_operator(p, &space)?;
        let dt = p.probe.dt;
        let n_steps = p.probe.n_steps();
        let build = |rho: &DensityMatrix| BranchKernel::new(&compiled, &split, &space, o.matrix(), rho.matrix(), dt);
        let kernels = [build(rho_init_0)?, build(rho_init_1)?];
        let (i0, i1) = rayon::join(
            || kernels[0].reference_current(n_steps),
            || kernels[1].reference_current(n_steps),
        );
        let reference = ReferenceCurrents { dt, i0, i1 };
        Ok(Self {
            params: p.clone(),
            filter: reference.filter(),
            kernels,
            reference,
            n_steps,
        })
    }

    pub fn reference(&self) -> &ReferenceCurrents {
        &self.reference
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    fn kernel(&self, branch: u8) -> Result<&BranchKernel> {
        self.kernels
            .get(usize::from(branch))
            .ok_or_else(|| Error::InvalidParams(format!("branch must be 0 or 1, got {branch}")))
    }

    pub fn run_trajectory(&self, branch: u8, index: u64) -> Result<TrajectoryRecord> {
        self.run(branch, index, None).map(|(r, _)| r)
    }

    /// Also keeps the current averaged over windows of `stride` steps.
    pub fn run_trajectory_recorded(&self, branch: u8, index: u64, stride: usize) -> Result<TrajectoryRecord> {
        if stride == 0 {
            return Err(Error::InvalidParams("stride must be positive".into()));
        }
        self.run(branch, index, Some(stride)).map(|(r, _)| r)
    }

    /// Conditional state at `t_probe`.
    pub fn final_state(&self, branch: u8, index: u64) -> Result<DensityMatrix> {
        self.run(branch, index, None).map(|(_, rho)| rho)
    }

    /// Deterministic state at `t_probe`, charge-diagonal part only.
    /// One trajectory driven by caller-supplied standard normal draws.
    pub fn run_with_noise(&self, branch: u8, noise: impl FnMut() -> f64) -> Result<(f64, DensityMatrix)> {
        let kernel = self.kernel(branch)?;
        let mut x = kernel.initial();
        let dt = self.params.probe.dt;
        let mut s = 0.0;
        kernel.integrate(&mut x, self.n_steps, noise, |k, e, dw| s += (e * dt + dw) * self.filter[k])?;
        Ok((s, kernel.to_state(&x)?))
    }

    pub fn deterministic_state(&self, branch: u8) -> Result<DensityMatrix> {
        self.kernel(branch)?.deterministic_state(self.n_steps)
    }

    fn run(&self, branch: u8, index: u64, stride: Option<usize>) -> Result<(TrajectoryRecord, DensityMatrix)> {
        let kernel = self.kernel(branch)?;
        let mut rng = noise_rng(self.params.probe.base_seed, branch, index);
        let mut x = kernel.initial();
        let dt = self.params.probe.dt;
        let mut s = 0.0;
        let mut samples = stride.map(|k| Vec::with_capacity(self.n_steps / k + 1));
        let mut window = 0.0;
        let filter = &self.filter;
        kernel.integrate(
            &mut x,
            self.n_steps,
            || StandardNormal.sample(&mut rng),
            |k, e, dw| {
                let increment = e * dt + dw;
                s += increment * filter[k];
                if let (Some(out), Some(stride)) = (samples.as_mut(), stride) {
                    window += increment;
                    if (k + 1) % stride == 0 || k + 1 == self.n_steps {
                        let len = (k % stride + 1) as f64;
                        out.push(window / (len * dt));
                        window = 0.0;
                    }
                }
            },
        )?;
        if !s.is_finite() {
            return Err(Error::InvariantViolation(format!("non-finite S in trajectory {index}")));
        }
        let record = TrajectoryRecord {
            branch,
            seed: index,
            s,
            current_samples: samples,
        };
        Ok((record, kernel.to_state(&x)?))
    }

    /// `n_traj` trajectories per branch; the result does not depend on scheduling.
    pub fn run_ensemble(&self, n_traj: usize) -> Result<EnsembleResult> {
        if n_traj == 0 {
            return Err(Error::InvalidParams("n_traj must be at least 1".into()));
        }
        let jobs: Vec<(u8, u64)> = (0..2u8).flat_map(|b| (0..n_traj as u64).map(move |i| (b, i))).collect();
        let records: Vec<TrajectoryRecord> = jobs
            .par_iter()
            .map(|&(b, i)| self.run_trajectory(b, i))
            .collect::<Result<_>>()?;
        let (r0, r1) = records.split_at(n_traj);
        let s0: Vec<f64> = r0.iter().map(|r| r.s).collect();
        let s1: Vec<f64> = r1.iter().map(|r| r.s).collect();
        EnsembleResult::new(s0, s1, self.params.probe.dt, self.params.probe.base_seed)
    }
}

/// Threshold decision on the two lists of `S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub threshold: f64,
    pub p_error_real: f64,
    /// Set when `mean(S0) > mean(S1)`, so branch 0 is declared above the threshold.
    pub flipped: bool,
}

/// Scans midpoints of the sorted union and keeps the threshold with the smallest error.
pub fn classify_ensemble(s0: &[f64], s1: &[f64]) -> Result<Classification> {
    if s0.is_empty() || s1.is_empty() {
        return Err(Error::InvalidParams("both lists must be nonempty".into()));
    }
    if s0.iter().chain(s1).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("S values must be finite".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let flipped = mean(s0) > mean(s1);
    let sign = if flipped { -1.0 } else { 1.0 };
    // Labelled values in the orientation where branch 0 lies below.
    let mut all: Vec<(f64, bool)> = s0
        .iter()
        .map(|&v| (sign * v, false))
        .chain(s1.iter().map(|&v| (sign * v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (n0, n1) = (s0.len() as f64, s1.len() as f64);
    // Threshold below everything: every S0 is above, no S1 is below.
    let mut above0 = s0.len();
    let mut below1 = 0usize;
    let err = |a0: usize, b1: usize| 0.5 * a0 as f64 / n0 + 0.5 * b1 as f64 / n1;
    let mut best = (err(above0, below1), all[0].0 - 1.0);
    let mut k = 0;
    while k < all.len() {
        let v = all[k].0;
        while k < all.len() && all[k].0 == v {
            if all[k].1 {
                below1 += 1;
            } else {
                above0 -= 1;
            }
            k += 1;
        }
        let thr = if k < all.len() { 0.5 * (v + all[k].0) } else { v + 1.0 };
        let e = err(above0, below1);
        if e < best.0 {
            best = (e, thr);
        }
    }
    Ok(Classification {
        threshold: sign * best.1,
        p_error_real: best.0,
        flipped,
    })
}

/// `P_E,M,real` for a given threshold and orientation.
pub fn error_at_threshold(s0: &[f64], s1: &[f64], threshold: f64, flipped: bool) -> f64 {
    let (above0, below1) = if flipped {
        (s0.iter().filter(|&&v| v < threshold).count(), s1.iter().filter(|&&v| v > threshold).count())
    } else {
        (s0.iter().filter(|&&v| v > threshold).count(), s1.iter().filter(|&&v| v < threshold).count())
    };
    0.5 * above0 as f64 / s0.len() as f64 + 0.5 * below1 as f64 / s1.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub count0: Vec<usize>,
    pub count1: Vec<usize>,
}

/// Common equal-width bins over the range of both lists.
pub fn histogram(s0: &[f64], s1: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let (mut lo, mut hi) = s0
        .iter()
        .chain(s1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        (lo, hi) = (lo - 0.5, lo + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let count = |v: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in v {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            c[k] += 1;
        }
        c
    };
    Histogram {
        edges,
        count0: count(s0),
        count1: count(s1),
    }
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub threshold: f64,
    pub p_error_real: f64,
    pub flipped: bool,
    pub histogram: Histogram,
    pub dt: f64,
    pub base_seed: u64,
}

impl EnsembleResult {
    pub fn new(s0: Vec<f64>, s1: Vec<f64>, dt: f64, base_seed: u64) -> Result<Self> {
        let c = classify_ensemble(&s0, &s1)?;
        let histogram = histogram(&s0, &s1, DEFAULT_HISTOGRAM_BINS);
        Ok(Self {
            threshold: c.threshold,
            p_error_real: c.p_error_real,
            flipped: c.flipped,
            histogram,
            s0,
            s1,
            dt,
            base_seed,
        })
    }

    /// Fractions of branch 0 declared 1 and of branch 1 declared 0.
    pub fn branch_errors(&self) -> (f64, f64) {
        let t = self.threshold;
        let (wrong0, wrong1) = if self.flipped {
            (self.s0.iter().filter(|&&v| v < t).count(), self.s1.iter().filter(|&&v| v > t).count())
        } else {
            (self.s0.iter().filter(|&&v| v > t).count(), self.s1.iter().filter(|&&v| v < t).count())
        };
        (wrong0 as f64 / self.s0.len() as f64, wrong1 as f64 / self.s1.len() as f64)
    }

    pub fn n_traj(&self) -> usize {
        self.s0.len()
    }

    /// Binomial standard error of `p_error_real`.
    pub fn standard_error(&self) -> f64 {
        let (a, b) = self.branch_errors();
        let var = 0.25 * (a * (1.0 - a) / self.s0.len() as f64 + b * (1.0 - b) / self.s1.len() as f64);
        var.sqrt()
    }

    /// `branch,seed,S`.
    pub fn write_trajectories_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "branch,seed,S")?;
        for (b, list) in [(0, &self.s0), (1, &self.s1)] {
            for (i, s) in list.iter().enumerate() {
                writeln!(out, "{b},{i},{s:.11e}")?;
            }
        }
        Ok(())
    }

    /// `bin_left,bin_right,count0,count1`.
    pub fn write_histogram_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "bin_left,bin_right,count0,count1")?;
        let h = &self.histogram;
        for k in 0..h.count0.len() {
            writeln!(out, "{:.11e},{:.11e},{},{}", h.edges[k], h.edges[k + 1], h.count0[k], h.count1[k])?;
        }
        Ok(())
    }

    /// Key-value summary in TOML syntax.
    pub fn write_summary(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "threshold = {:.11e}", self.threshold)?;
        writeln!(out, "p_error_real = {:.11e}", self.p_error_real)?;
        writeln!(out, "standard_error = {:.11e}", self.standard_error())?;
        writeln!(out, "flipped = {}", self.flipped)?;
        writeln!(out, "n_traj = {}", self.n_traj())?;
        writeln!(out, "dt = {:.11e}", self.dt)?;
        writeln!(out, "base_seed = {}", self.base_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_lists() {
        let c = classify_ensemble(&[0.0, 1.0], &[10.0, 11.0]).unwrap();
        assert_eq!(c.p_error_real, 0.0);
        assert!(c.threshold > 1.0 && c.threshold < 10.0);
        assert!(!c.flipped);
    }

    #[test]
    fn identical_lists_give_half() {
        let v = [0.3, -1.0, 2.0, 2.0, 5.0];
        let c = classify_ensemble(&v, &v).unwrap();
        assert_eq!(c.p_error_real, 0.5);
    }

    #[test]
    fn orientation_flip() {
        let c = classify_ensemble(&[10.0, 11.0], &[0.0, 1.0]).unwrap();
        assert!(c.flipped);
        assert_eq!(c.p_error_real, 0.0);
        assert_eq!(error_at_threshold(&[10.0, 11.0], &[0.0, 1.0], c.threshold, true), 0.0);
    }

    #[test]
    fn quadrature_of_unit_signals() {
        let n = 50_000;
        let ones = vec![1.0; n];
        let zeros = vec![0.0; n];
        let s = matched_filter_and_integrate(&ones, &ones, &zeros, 0.01).unwrap();
        assert!((s - 500.0).abs() < 1e-9);
        assert_eq!(matched_filter_and_integrate(&ones, &ones, &ones, 0.01).unwrap(), 0.0);
        assert!(matches!(
            matched_filter_and_integrate(&ones, &ones[1..], &zeros, 0.01),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0], &[1.0, 2.0], 4);
        assert_eq!(h.count0.iter().sum::<usize>(), 3);
        assert_eq!(h.count1.iter().sum::<usize>(), 2);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(*h.count1.last().unwrap(), 1);
    }

    #[test]
    fn streams_are_distinct() {
        use rand::Rng;
        let a: u64 = noise_rng(1, 0, 0).random();
        let b: u64 = noise_rng(1, 1, 0).random();
        let c: u64 = noise_rng(1, 0, 1).random();
        let d: u64 = noise_rng(1, 0, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, d);
    }
}
