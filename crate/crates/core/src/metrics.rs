//! Distinguishability measures and Wigner functions.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{coherent_state, same_space, trace_norm, DensityMatrix, StateVector, C64, RESONATOR};

/// Helstrom error `½ − ¼ ‖ρ0 − ρ1‖_tr`.
pub fn p_error_optimal(rho0: &DensityMatrix, rho1: &DensityMatrix) -> Result<f64> {
    same_space(rho0.space(), rho1.space())?;
    let diff = rho0.matrix() - rho1.matrix();
    let p = 0.5 - 0.25 * trace_norm(&diff);
    Ok(p.clamp(0.0, 0.5))
}

/// Error of the projective test `M0 = |α⟩⟨α|`, `M1 = I − M0` at equal priors.
pub fn p_error_projective(rho0: &DensityMatrix, rho1: &DensityMatrix, alpha: C64) -> Result<f64> {
    let (r0, r1) = (resonator_state(rho0)?, resonator_state(rho1)?);
    let m0 = coherent_state(alpha, r0.space())?;
    p_error_projective_with(&r0, &r1, &m0)
}

/// Same test for an arbitrary pure `M0 = |ψ⟩⟨ψ|`.
pub fn p_error_projective_with(rho0: &DensityMatrix, rho1: &DensityMatrix, m0: &StateVector) -> Result<f64> {
    same_space(rho0.space(), rho1.space())?;
    let p0 = rho0.overlap(m0)?;
    let p1 = rho1.overlap(m0)?;
    Ok((0.5 * (1.0 - p0) + 0.5 * p1).clamp(0.0, 1.0))
}

fn resonator_state(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.space().dims().len() == 1 {
        Ok(rho.clone())
    } else {
        rho.partial_trace(RESONATOR)
    }
}

/// Phase-space rectangle with `β = x + i p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub p_range: (f64, f64),
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_range: (-4.5, 4.5),
            p_range: (-4.5, 4.5),
            resolution: 151,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok(self.x_range) || !ok(self.p_range) {
            return Err(Error::InvalidParams("grid ranges must be finite with min < max".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidParams("grid resolution must be at least 2".into()));
        }
        Ok(())
    }

    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_range, self.resolution)
    }

    pub fn ps(&self) -> Vec<f64> {
        Self::axis(self.p_range, self.resolution)
    }

    pub fn cell_area(&self) -> f64 {
        let n = (self.resolution - 1) as f64;
        (self.x_range.1 - self.x_range.0) / n * (self.p_range.1 - self.p_range.0) / n
    }

    fn max_radius(&self) -> f64 {
        let x = self.x_range.0.abs().max(self.x_range.1.abs());
        let p = self.p_range.0.abs().max(self.p_range.1.abs());
        x.hypot(p)
    }
}

#[derive(Clone, Debug)]
pub struct WignerGrid {
    pub spec: GridSpec,
    /// `values[ix * resolution + ip]`.
    pub values: Vec<f64>,
    /// Largest imaginary part discarded while summing.
    pub max_imaginary: f64,
    /// Set when the grid reaches beyond `√N_cut / 2`, where the truncated state is unreliable.
    pub truncation_warning: bool,
}

impl WignerGrid {
    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.spec.resolution + ip]
    }

    /// Riemann sum `Σ W · dx dp`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }

    /// `(x, p, W)` at the largest value.
    pub fn peak(&self) -> (f64, f64, f64) {
        let (xs, ps) = (self.spec.xs(), self.spec.ps());
        let n = self.spec.resolution;
        let (k, w) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &w)| if w > acc.1 { (k, w) } else { acc });
        (xs[k / n], ps[k % n], w)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x,p,w")?;
        let (xs, ps) = (self.spec.xs(), self.spec.ps());
        for (ix, x) in xs.iter().enumerate() {
            for (ip, p) in ps.iter().enumerate() {
                writeln!(out, "{:.11e},{:.11e},{:.11e}", x, p, self.value(ix, ip))?;
            }
        }
        Ok(())
    }
}

/// `W(β) = (2/π) tr[ρ D(β) Π D†(β)] = (2/π) Σ (−1)^n ρ_nk ⟨k|D(2β)|n⟩`, with the
/// displacement matrix elements taken from their closed Laguerre form.
pub fn wigner(rho: &DensityMatrix, spec: &GridSpec) -> Result<WignerGrid> {
    spec.validate()?;
    if rho.space().dims().len() != 1 {
        return Err(Error::InvalidState("wigner expects a single-mode state".into()));
    }
    let n = rho.space().dim();
    let m = rho.matrix();
    let rows: Vec<C64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    let (xs, ps) = (spec.xs(), spec.ps());
    let res = spec.resolution;
    let cells: Vec<(f64, f64)> = xs
        .par_iter()
        .flat_map_iter(|&x| {
            let ps = &ps;
            let rows = &rows;
            ps.iter().map(move |&p| wigner_point(rows, n, C64::new(x, p)))
        })
        .collect();
    let values = cells.iter().map(|c| c.0).collect::<Vec<_>>();
    let max_imaginary = cells.iter().fold(0.0f64, |a, c| a.max(c.1.abs()));
    debug_assert_eq!(values.len(), res * res);
    Ok(WignerGrid {
        spec: *spec,
        values,
        max_imaginary,
        truncation_warning: spec.max_radius() > (n as f64).sqrt() / 2.0,
    })
}

fn wigner_point(rho: &[C64], n: usize, beta: C64) -> (f64, f64) {
    let gamma = beta * 2.0;
    let d = displacement_elements(gamma, n);
    let mut acc = C64::new(0.0, 0.0);
    for row in 0..n {
        let sign = if row % 2 == 0 { 1.0 } else { -1.0 };
        for k in 0..n {
            acc += rho[row * n + k] * d[k * n + row] * sign;
        }
    }
    let w = acc * (2.0 / PI);
    (w.re, w.im)
}

/// Untruncated `⟨k|D(γ)|n⟩` for `k, n < dim`, row-major.
pub fn displacement_elements(gamma: C64, dim: usize) -> Vec<C64> {
    let x = gamma.norm_sqr();
    let e = (-0.5 * x).exp();
    let mut out = vec![C64::new(0.0, 0.0); dim * dim];
    let mut lag = vec![0.0; dim];
    let mut gpow = C64::new(1.0, 0.0);
    let mgc = -gamma.conj();
    let mut mpow = C64::new(1.0, 0.0);
    for m in 0..dim {
        let len = dim - m;
        let mf = m as f64;
        lag[0] = 1.0;
        if len > 1 {
            lag[1] = 1.0 + mf - x;
        }
        for j in 1..len.saturating_sub(1) {
            let jf = j as f64;
            lag[j + 1] = ((2.0 * jf + 1.0 + mf - x) * lag[j] - (jf + mf) * lag[j - 1]) / (jf + 1.0);
        }
        // √(n!/(n+m)!) built incrementally in n.
        let mut ratio = (1..=m).fold(1.0, |r, k| r / (k as f64).sqrt());
        for nn in 0..len {
            if nn > 0 {
                ratio *= ((nn as f64) / ((nn + m) as f64)).sqrt();
            }
            let c = e * lag[nn] * ratio;
            out[(nn + m) * dim + nn] = gpow * c;
            if m > 0 {
                out[nn * dim + nn + m] = mpow * c;
            }
        }
        gpow *= gamma;
        mpow *= mgc;
    }
    out
}
