use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hilbert::C64;

/// Atom decay rate γ01 in SI units (2π · 10 MHz). Only used for display conversions.
pub const GAMMA01_SI: f64 = 2.0 * PI * 10.0e6;

/// Converts a duration in units of 1/γ01 to microseconds.
pub fn time_to_micros(t: f64) -> f64 {
    t / GAMMA01_SI * 1e6
}

/// Converts a rate in units of γ01 to MHz (angular rate divided by 2π).
pub fn rate_to_mhz(rate: f64) -> f64 {
    rate * GAMMA01_SI / (2.0 * PI) / 1e6
}

/// Dephasing rate γ11/γ01 = 2/(T_φ γ01) for a pure dephasing time in seconds.
pub fn dephasing_rate_from_t_phi(t_phi_seconds: f64) -> f64 {
    2.0 / (t_phi_seconds * GAMMA01_SI)
}

/// Resonator decay κ/γ01 = 1/(T_1 γ01) for an energy relaxation time in seconds.
pub fn kappa_from_t1(t1_seconds: f64) -> f64 {
    1.0 / (t1_seconds * GAMMA01_SI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HamiltonianKind {
    Full,
    Dispersive,
}

impl HamiltonianKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HamiltonianKind::Full => "full",
            HamiltonianKind::Dispersive => "dispersive",
        }
    }
}

impl std::str::FromStr for HamiltonianKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(HamiltonianKind::Full),
            "dispersive" => Ok(HamiltonianKind::Dispersive),
            other => Err(format!("unknown hamiltonian kind `{other}` (expected `full` or `dispersive`)")),
        }
    }
}

/// Probe (readout) stage settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    /// Rabi frequency Ω of the drive on |0⟩↔|1⟩.
    pub omega: f64,
    /// Homodyne phase φ in radians.
    pub phi: f64,
    /// Atom detuning used during probing (replaces δ1).
    pub delta1_probe: f64,
    pub t_probe: f64,
    /// Stochastic integration step.
    pub dt: f64,
    pub n_traj: usize,
    pub base_seed: u64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            omega: 0.2,
            phi: PI / 2.0,
            delta1_probe: 0.1,
            t_probe: 500.0,
            dt: 0.01,
            n_traj: 10_000,
            base_seed: 20_191,
        }
    }
}

impl ProbeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega", self.omega),
            ("phi", self.phi),
            ("delta1_probe", self.delta1_probe),
            ("t_probe", self.t_probe),
            ("dt", self.dt),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("probe.{name} must be finite")));
            }
        }
        if self.t_probe <= 0.0 {
            return Err(Error::InvalidParams("probe.t_probe must be positive".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidParams("probe.dt must be positive".into()));
        }
        if self.dt > self.t_probe / 1000.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParams(format!(
                "probe.dt = {} exceeds t_probe/1000 = {}",
                self.dt,
                self.t_probe / 1000.0
            )));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParams("probe.n_traj must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of stochastic steps covering `[0, t_probe]`.
    pub fn n_steps(&self) -> usize {
        (self.t_probe / self.dt).round().max(1.0) as usize
    }
}

/// Physical parameters of one detection run, in units ħ = γ01 = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    pub gamma01: f64,
    pub gamma12: f64,
    /// Bandwidth of the incident photon (decay rate of the source mode).
    pub gamma_c: f64,
    pub kappa: f64,
    pub gamma11: f64,
    pub gamma22: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub g: f64,
    /// Amplitude of the coherent state the resonator is prepared in.
    pub alpha: C64,
    pub t_interact: f64,
    pub probe: ProbeParams,
    pub photon_present: bool,
    /// Fock cutoff of the resonator.
    pub n_cut: usize,
}

impl SystemParams {
    /// The optimized point with every imperfection switched on
    /// (γc = 0.1, κ = 3.2e-5, γ11 = 3.2e-3, γ22 = 6.4e-3, γ12 = 0.1, g = 7,
    /// δ1 = −1.380, δ2 = −96.89, T_interact = 92, ⟨a†a⟩ = 3).
    pub fn headline() -> Self {
        Self {
            gamma01: 1.0,
            gamma12: 0.1,
            gamma_c: 0.1,
            kappa: 3.2e-5,
            gamma11: 3.2e-3,
            gamma22: 6.4e-3,
            delta1: -1.380,
            delta2: -96.89,
            g: 7.0,
            alpha: C64::new(3f64.sqrt(), 0.0),
            t_interact: 92.0,
            probe: ProbeParams::default(),
            photon_present: true,
            n_cut: 30,
        }
    }

    /// The lossless comparison point (γc = 0.1, κ = γ11 = γ22 = 0, δ1 = −0.8, δ2 = −18, g = 2.45).
    /// `t_interact` is set to the upper end of the allowed window, 10/γc.
    pub fn comparison() -> Self {
        Self {
            kappa: 0.0,
            gamma11: 0.0,
            gamma22: 0.0,
            delta1: -0.8,
            delta2: -18.0,
            g: 2.45,
            t_interact: 100.0,
            ..Self::headline()
        }
    }

    /// Sets γ11 and the higher-level rate γ22 = 2 γ11.
    pub fn with_dephasing(mut self, gamma11: f64) -> Self {
        self.gamma11 = gamma11;
        self.gamma22 = 2.0 * gamma11;
        self
    }

    /// Explicit override of both dephasing rates.
    pub fn with_dephasing_rates(mut self, gamma11: f64, gamma22: f64) -> Self {
        self.gamma11 = gamma11;
        self.gamma22 = gamma22;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_detunings(mut self, delta1: f64, delta2: f64) -> Self {
        self.delta1 = delta1;
        self.delta2 = delta2;
        self
    }

    pub fn with_gamma_c(mut self, gamma_c: f64) -> Self {
        self.gamma_c = gamma_c;
        self
    }

    pub fn with_t_interact(mut self, t: f64) -> Self {
        self.t_interact = t;
        self
    }

    pub fn with_n_cut(mut self, n_cut: usize) -> Self {
        self.n_cut = n_cut;
        self
    }

    pub fn with_photon(mut self, present: bool) -> Self {
        self.photon_present = present;
        self
    }

    /// Mean photon number of the initial coherent state.
    pub fn mean_photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    /// Dispersive shift χ = g²/(δ1 + δ2).
    pub fn chi(&self) -> Result<f64> {
        chi(self.g, self.delta1 + self.delta2)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("gamma01", self.gamma01),
            ("gamma12", self.gamma12),
            ("gamma_c", self.gamma_c),
            ("kappa", self.kappa),
            ("gamma11", self.gamma11),
            ("gamma22", self.gamma22),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be a finite non-negative rate, got {v}")));
            }
        }
        for (name, v) in [("delta1", self.delta1), ("delta2", self.delta2), ("g", self.g)] {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite")));
            }
        }
        if !self.alpha.re.is_finite() || !self.alpha.im.is_finite() {
            return Err(Error::InvalidParams("alpha must be finite".into()));
        }
        if !(self.t_interact > 0.0) || !self.t_interact.is_finite() {
            return Err(Error::InvalidParams(format!(
                "t_interact must be positive, got {}",
                self.t_interact
            )));
        }
        if self.n_cut < 2 {
            return Err(Error::InvalidParams(format!("n_cut must be at least 2, got {}", self.n_cut)));
        }
        self.probe.validate()
    }
}

pub(crate) fn chi(g: f64, detuning_sum: f64) -> Result<f64> {
    if detuning_sum == 0.0 {
        return Err(Error::DegenerateDetuning);
    }
    Ok(g * g / detuning_sum)
}
