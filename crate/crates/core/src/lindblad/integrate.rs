use crate::error::{Error, Result};
use crate::hilbert::{same_space, CMatrix, DensityMatrix, C64};

use super::model::{CompiledModel, LindbladModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    Rk4 { dt: f64 },
    /// Dormand–Prince 5(4) with local error control.
    Adaptive { tol: f64, initial_dt: f64 },
}

#[derive(Clone, Debug)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Output times, ascending and non-negative.
    pub sample_times: Vec<f64>,
    /// Eigen-check every sampled state (costly for large spaces).
    pub check_positivity: bool,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, sample_times: Vec<f64>) -> Self {
        Self {
            method: Method::Rk4 { dt },
            sample_times,
            check_positivity: true,
        }
    }

    pub fn adaptive(tol: f64, sample_times: Vec<f64>) -> Self {
        Self {
            method: Method::Adaptive { tol, initial_dt: 1e-3 },
            sample_times,
            check_positivity: true,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.method {
            Method::Rk4 { dt } if !(dt > 0.0) || !dt.is_finite() => {
                return Err(Error::InvalidParams(format!("rk4 step must be positive, got {dt}")))
            }
            Method::Adaptive { tol, initial_dt } if !(tol > 0.0) || !(initial_dt > 0.0) => {
                return Err(Error::InvalidParams("adaptive tolerance and initial step must be positive".into()))
            }
            _ => {}
        }
        let mut prev = 0.0;
        for &t in &self.sample_times {
            if !t.is_finite() || t < prev {
                return Err(Error::InvalidParams("sample times must be finite, non-negative and ascending".into()));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Maximum tolerated drift of Tr ρ during integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-4;
const SAMPLE_TOL: f64 = 1e-6;

/// Integrates `dρ/dt = L(ρ)` and returns the state at every requested time.
pub fn evolve(model: &LindbladModel, rho0: &DensityMatrix, cfg: &IntegratorConfig) -> Result<Vec<(f64, DensityMatrix)>> {
    same_space(model.space(), rho0.space())?;
    cfg.validate()?;
    let compiled = model.compile();
    let mut stepper = Stepper::new(&compiled);
    let mut rho = rho0.matrix().clone();
    let tr0 = rho.trace().re;
    let mut t = 0.0;
    let mut h_adaptive = match cfg.method {
        Method::Adaptive { initial_dt, .. } => initial_dt,
        Method::Rk4 { .. } => 0.0,
    };
    let mut out = Vec::with_capacity(cfg.sample_times.len());
    for &ts in &cfg.sample_times {
        match cfg.method {
            Method::Rk4 { dt } => {
                let span = ts - t;
                if span > 0.0 {
                    let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
                    let h = span / n as f64;
                    for _ in 0..n {
                        stepper.rk4(&mut rho, h);
                    }
                }
            }
            Method::Adaptive { tol, .. } => {
                stepper.dopri_to(&mut rho, t, ts, tol, &mut h_adaptive)?;
            }
        }
        t = ts;
        let drift = (rho.trace().re - tr0).abs();
        if drift > TRACE_DRIFT_LIMIT || !drift.is_finite() {
            return Err(Error::InvariantViolation(format!("trace drifted by {drift:.3e} at t = {t}")));
        }
        let state = DensityMatrix::new_unchecked(rho0.space().clone(), rho.clone())?;
        if cfg.check_positivity {
            check_sample(&state, t)?;
        }
        out.push((t, state));
    }
    Ok(out)
}

fn check_sample(state: &DensityMatrix, t: f64) -> Result<()> {
    let tr = state.trace().re;
    if (tr - 1.0).abs() > SAMPLE_TOL {
        return Err(Error::InvariantViolation(format!("trace {tr} at t = {t}")));
    }
    let min = state.min_eigenvalue();
    if min < -SAMPLE_TOL {
        return Err(Error::InvariantViolation(format!("eigenvalue {min:.3e} at t = {t}")));
    }
    Ok(())
}

// Dormand–Prince tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a> {
    model: &'a CompiledModel,
    k: [CMatrix; 7],
    tmp: CMatrix,
    scratch: CMatrix,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a CompiledModel) -> Self {
        let z = CMatrix::zeros(model.dim, model.dim);
        Self {
            model,
            k: std::array::from_fn(|_| z.clone()),
            tmp: z.clone(),
            scratch: z,
        }
    }

    fn eval(&mut self, idx: usize) {
        let (tmp, k, scratch) = (&self.tmp, &mut self.k, &mut self.scratch);
        self.model.apply_into(tmp, &mut k[idx], scratch);
    }

    fn stage(&mut self, y: &CMatrix, h: f64, coeffs: &[(usize, f64)]) {
        self.tmp.copy_from(y);
        for &(i, a) in coeffs {
            axpy(&mut self.tmp, h * a, &self.k[i]);
        }
    }

    fn rk4(&mut self, y: &mut CMatrix, h: f64) {
        self.model.apply_into(y, &mut self.k[0], &mut self.scratch);
        self.stage(y, h, &[(0, 0.5)]);
        self.eval(1);
        self.stage(y, h, &[(1, 0.5)]);
        self.eval(2);
        self.stage(y, h, &[(2, 1.0)]);
        self.eval(3);
        axpy(y, h / 6.0, &self.k[0]);
        axpy(y, h / 3.0, &self.k[1]);
        axpy(y, h / 3.0, &self.k[2]);
        axpy(y, h / 6.0, &self.k[3]);
    }

    fn dopri_to(&mut self, y: &mut CMatrix, mut t: f64, t_end: f64, tol: f64, h: &mut f64) -> Result<()> {
        let mut have_fsal = false;
        while t < t_end {
            let last = *h >= t_end - t;
            let step = if last { t_end - t } else { *h };
            if step < 1e-13 * t.abs().max(1.0) && !last {
                return Err(Error::StepSizeUnderflow { t, h: step });
            }
            if !have_fsal {
                self.model.apply_into(y, &mut self.k[0], &mut self.scratch);
            }
            self.stage(y, step, &[(0, A21)]);
            self.eval(1);
            self.stage(y, step, &[(0, A31), (1, A32)]);
            self.eval(2);
            self.stage(y, step, &[(0, A41), (1, A42), (2, A43)]);
            self.eval(3);
            self.stage(y, step, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            self.eval(4);
            self.stage(y, step, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            self.eval(5);
            self.stage(y, step, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
            let y_new = self.tmp.clone();
            self.eval(6);
            let mut err_sq = 0.0;
            let n = y.len() as f64;
            for idx in 0..y.len() {
                let e = step
                    * (self.k[0][idx] * E1
                        + self.k[2][idx] * E3
                        + self.k[3][idx] * E4
                        + self.k[4][idx] * E5
                        + self.k[5][idx] * E6
                        + self.k[6][idx] * E7);
                let sc = tol * (1.0 + y[idx].norm().max(y_new[idx].norm()));
                err_sq += (e.norm() / sc).powi(2);
            }
            let err = (err_sq / n).sqrt();
            if !err.is_finite() {
                return Err(Error::InvariantViolation(format!("non-finite error estimate at t = {t}")));
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if last { t_end } else { t + step };
                y.copy_from(&y_new);
                let k6 = std::mem::replace(&mut self.k[6], CMatrix::zeros(0, 0));
                self.k[6] = std::mem::replace(&mut self.k[0], k6);
                have_fsal = true;
                if !last {
                    *h = step * factor;
                }
            } else {
                *h = step * factor.min(1.0);
                have_fsal = true;
                if *h < 1e-13 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h: *h });
                }
            }
        }
        Ok(())
    }
}

fn axpy(y: &mut CMatrix, a: f64, x: &CMatrix) {
    let s = C64::new(a, 0.0);
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += s * xi;
    }
}
