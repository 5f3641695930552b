//! Run configuration: a TOML document with one table per concern.
//!
//! Every key is optional. Missing keys fall back to the chosen preset, and
//! [`Resolved::to_config`] writes back the fully populated form so an
//! artifact header reproduces its run without consulting defaults.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::C64;
use crate::lindblad::{HamiltonianKind, SystemParams};
use crate::metrics::GridSpec;
use crate::optimizer::{Bounds, Configuration, OptimizerOptions};
use crate::probe::DEFAULT_HISTOGRAM_BINS;
use crate::sequence::InteractionSolver;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub wigner: WignerSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `headline` or `comparison`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma01: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma12: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma11: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma22: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_im: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_interact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cut: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    /// `sector` or `dense`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    /// Sector step, or the RK4 step for `dense`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1_probe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_probe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_bins: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Plot the resonator after the displacement by −α instead of before.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub displaced: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_tol: Option<f64>,
    /// Upper end of the interaction window; `10/γc` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configurations: Option<Vec<String>>,
}

/// Typed view of a configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub preset: Preset,
    pub params: SystemParams,
    pub kind: HamiltonianKind,
    pub solver: InteractionSolver,
    pub histogram_bins: usize,
    pub grid: GridSpec,
    pub wigner_displaced: bool,
    pub bounds: Bounds,
    pub optimizer: OptimizerOptions,
    pub sweep_gamma_c: Vec<f64>,
    pub sweep_configurations: Vec<Configuration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Headline,
    Comparison,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Headline => "headline",
            Preset::Comparison => "comparison",
        }
    }

    pub fn params(&self) -> SystemParams {
        match self {
            Preset::Headline => SystemParams::headline(),
            Preset::Comparison => SystemParams::comparison(),
        }
    }
}

pub const DEFAULT_SWEEP_GAMMA_C: [f64; 4] = [0.2, 0.1, 0.05, 0.02];

impl RunConfig {
    /// Parses TOML text. Syntax and unknown-key errors carry the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s)),
            message: e.message().to_string(),
        })?;
        // Names stay on one line so the artifact header can embed them.
        let names = [
            ("system", "preset", cfg.system.preset.as_slice()),
            ("system", "hamiltonian", cfg.system.hamiltonian.as_slice()),
            ("numerics", "solver", cfg.numerics.solver.as_slice()),
            ("sweep", "configurations", cfg.sweep.configurations.as_deref().unwrap_or_default()),
        ];
        for (section, key, values) in names {
            if values.iter().any(|v| v.chars().any(char::is_control)) {
                return Err(Error::Config {
                    line: key_line(text, section, key),
                    message: format!("{section}.{key}: control characters are not allowed"),
                });
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config tables serialize")
    }

    /// Resolves against defaults without source positions.
    pub fn resolve(&self) -> Result<Resolved> {
        self.resolve_in("")
    }

    /// Resolves against defaults; `text` is the source used to locate semantic errors.
    pub fn resolve_in(&self, text: &str) -> Result<Resolved> {
        let at = |section: &str, key: &str, message: String| Error::Config {
            line: key_line(text, section, key),
            message: format!("{section}.{key}: {message}"),
        };
        let s = &self.system;
        let preset = match s.preset.as_deref() {
            None | Some("headline") => Preset::Headline,
            Some("comparison") => Preset::Comparison,
            Some(other) => {
                return Err(at(
                    "system",
                    "preset",
                    format!("unknown preset `{other}` (expected `headline` or `comparison`)"),
                ))
            }
        };
        let kind = match s.hamiltonian.as_deref() {
            None => HamiltonianKind::Full,
            Some(h) => h.parse().map_err(|m| at("system", "hamiltonian", m))?,
        };
        let mut p = preset.params();
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.gamma01, s.gamma01);
        set(&mut p.gamma12, s.gamma12);
        set(&mut p.gamma_c, s.gamma_c);
        set(&mut p.kappa, s.kappa);
        set(&mut p.gamma11, s.gamma11);
        set(&mut p.gamma22, s.gamma22);
        set(&mut p.delta1, s.delta1);
        set(&mut p.delta2, s.delta2);
        set(&mut p.g, s.g);
        set(&mut p.t_interact, s.t_interact);
        p.alpha = C64::new(s.alpha_re.unwrap_or(p.alpha.re), s.alpha_im.unwrap_or(p.alpha.im));
        if let Some(n) = s.n_cut {
            p.n_cut = n;
        }

        let pr = &self.probe;
        set(&mut p.probe.omega, pr.omega);
        set(&mut p.probe.phi, pr.phi);
        set(&mut p.probe.delta1_probe, pr.delta1_probe);
        set(&mut p.probe.t_probe, pr.t_probe);
        set(&mut p.probe.dt, pr.dt);
        if let Some(n) = pr.n_traj {
            p.probe.n_traj = n;
        }
        if let Some(seed) = pr.base_seed {
            if seed > i64::MAX as u64 {
                return Err(at("probe", "base_seed", format!("{seed} exceeds {}", i64::MAX)));
            }
            p.probe.base_seed = seed;
        }
        let histogram_bins = pr.histogram_bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
        if histogram_bins == 0 {
            return Err(at("probe", "histogram_bins", "must be at least 1".into()));
        }
        if let Err(e) = p.validate() {
            return Err(locate_param_error(text, e));
        }

        let n = &self.numerics;
        let solver = match n.solver.as_deref() {
            None | Some("sector") => {
                let InteractionSolver::Sector { step, prune_tol } = InteractionSolver::default() else {
                    unreachable!()
                };
                InteractionSolver::Sector {
                    step: n.step.unwrap_or(step),
                    prune_tol: n.prune_tol.unwrap_or(prune_tol),
                }
            }
            Some("dense") => InteractionSolver::Dense { dt: n.step.unwrap_or(1e-3) },
            Some(other) => {
                return Err(at(
                    "numerics",
                    "solver",
                    format!("unknown solver `{other}` (expected `sector` or `dense`)"),
                ))
            }
        };
        let (step, tol) = match solver {
            InteractionSolver::Sector { step, prune_tol } => (step, prune_tol),
            InteractionSolver::Dense { dt } => (dt, 0.0),
        };
        if !(step > 0.0) || !step.is_finite() {
            return Err(at("numerics", "step", format!("must be positive, got {step}")));
        }
        if !(0.0..1.0).contains(&tol) {
            return Err(at("numerics", "prune_tol", format!("must lie in [0, 1), got {tol}")));
        }

        let w = &self.wigner;
        let d = GridSpec::default();
        let grid = GridSpec {
            x_range: (w.x_min.unwrap_or(d.x_range.0), w.x_max.unwrap_or(d.x_range.1)),
            p_range: (w.p_min.unwrap_or(d.p_range.0), w.p_max.unwrap_or(d.p_range.1)),
            resolution: w.resolution.unwrap_or(d.resolution),
        };
        if let Err(e) = grid.validate() {
            return Err(at("wigner", "resolution", e.to_string()));
        }

        let o = &self.optimize;
        let db = Bounds::default();
        let bounds = Bounds {
            delta1: (o.delta1_min.unwrap_or(db.delta1.0), o.delta1_max.unwrap_or(db.delta1.1)),
            delta2: (o.delta2_min.unwrap_or(db.delta2.0), o.delta2_max.unwrap_or(db.delta2.1)),
        };
        if let Err(e) = bounds.validate() {
            return Err(at("optimize", "delta1_min", e.to_string()));
        }
        let mut optimizer = OptimizerOptions::default();
        if let Some(r) = o.restarts {
            if r == 0 {
                return Err(at("optimize", "restarts", "must be at least 1".into()));
            }
            optimizer.restarts = r;
        }
        if let Some(m) = o.max_evals {
            if m < 3 {
                return Err(at("optimize", "max_evals", "must be at least 3".into()));
            }
            optimizer.simplex.max_evals = m;
        }
        set(&mut optimizer.step, o.step);
        set(&mut optimizer.prune_tol, o.prune_tol);
        if !(optimizer.step > 0.0) || !optimizer.step.is_finite() {
            return Err(at("optimize", "step", format!("must be positive, got {}", optimizer.step)));
        }
        if !(0.0..1.0).contains(&optimizer.prune_tol) {
            return Err(at("optimize", "prune_tol", "must lie in [0, 1)".into()));
        }
        if let Some(t) = o.t_max {
            if !(t > 0.0) || !t.is_finite() {
                return Err(at("optimize", "t_max", format!("must be positive, got {t}")));
            }
        }
        optimizer.t_max = o.t_max;

        let sw = &self.sweep;
        let sweep_gamma_c = sw.gamma_c.clone().unwrap_or_else(|| DEFAULT_SWEEP_GAMMA_C.to_vec());
        if sweep_gamma_c.is_empty() {
            return Err(at("sweep", "gamma_c", "list is empty".into()));
        }
        if let Some(g) = sweep_gamma_c.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(at("sweep", "gamma_c", format!("values must be positive, got {g}")));
        }
        let sweep_configurations = match &sw.configurations {
            None => Configuration::ALL.to_vec(),
            Some(names) => {
                if names.is_empty() {
                    return Err(at("sweep", "configurations", "list is empty".into()));
                }
                names
                    .iter()
                    .map(|n| n.parse().map_err(|m| at("sweep", "configurations", m)))
                    .collect::<Result<Vec<_>>>()?
            }
        };

        Ok(Resolved {
            preset,
            params: p,
            kind,
            solver,
            histogram_bins,
            grid,
            wigner_displaced: w.displaced.unwrap_or(false),
            bounds,
            optimizer,
            sweep_gamma_c,
            sweep_configurations,
        })
    }
}

/// Parses and resolves in one go.
pub fn load(text: &str) -> Result<Resolved> {
    RunConfig::parse(text)?.resolve_in(text)
}

impl Resolved {
    /// The fully populated configuration that resolves back to `self`.
    pub fn to_config(&self) -> RunConfig {
        let p = &self.params;
        let (solver, step, prune_tol) = match self.solver {
            InteractionSolver::Sector { step, prune_tol } => ("sector", step, Some(prune_tol)),
            InteractionSolver::Dense { dt } => ("dense", dt, None),
        };
        RunConfig {
            system: SystemSection {
                preset: Some(self.preset.as_str().into()),
                hamiltonian: Some(self.kind.as_str().into()),
                gamma01: Some(p.gamma01),
                gamma12: Some(p.gamma12),
                gamma_c: Some(p.gamma_c),
                kappa: Some(p.kappa),
                gamma11: Some(p.gamma11),
                gamma22: Some(p.gamma22),
                delta1: Some(p.delta1),
                delta2: Some(p.delta2),
                g: Some(p.g),
                alpha_re: Some(p.alpha.re),
                alpha_im: Some(p.alpha.im),
                t_interact: Some(p.t_interact),
                n_cut: Some(p.n_cut),
            },
            numerics: NumericsSection {
                solver: Some(solver.into()),
                step: Some(step),
                prune_tol,
            },
            probe: ProbeSection {
                omega: Some(p.probe.omega),
                phi: Some(p.probe.phi),
                delta1_probe: Some(p.probe.delta1_probe),
                t_probe: Some(p.probe.t_probe),
                dt: Some(p.probe.dt),
                n_traj: Some(p.probe.n_traj),
                base_seed: Some(p.probe.base_seed),
                histogram_bins: Some(self.histogram_bins),
            },
            wigner: WignerSection {
                x_min: Some(self.grid.x_range.0),
                x_max: Some(self.grid.x_range.1),
                p_min: Some(self.grid.p_range.0),
                p_max: Some(self.grid.p_range.1),
                resolution: Some(self.grid.resolution),
                displaced: Some(self.wigner_displaced),
            },
            optimize: OptimizeSection {
                delta1_min: Some(self.bounds.delta1.0),
                delta1_max: Some(self.bounds.delta1.1),
                delta2_min: Some(self.bounds.delta2.0),
                delta2_max: Some(self.bounds.delta2.1),
                restarts: Some(self.optimizer.restarts),
                max_evals: Some(self.optimizer.simplex.max_evals),
                step: Some(self.optimizer.step),
                prune_tol: Some(self.optimizer.prune_tol),
                t_max: self.optimizer.t_max,
            },
            sweep: SweepSection {
                gamma_c: Some(self.sweep_gamma_c.clone()),
                configurations: Some(self.sweep_configurations.iter().map(|c| c.as_str().into()).collect()),
            },
        }
    }
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    let end = span.start.min(text.len());
    text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Line of `key` inside `[section]`, else the section header, else 0.
fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header = i + 1;
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return i + 1;
                }
            }
        }
    }
    header
}

/// Maps a parameter validation error to the key it names.
fn locate_param_error(text: &str, e: Error) -> Error {
    let message = e.to_string();
    const SYSTEM: [&str; 14] = [
        "gamma01", "gamma12", "gamma_c", "kappa", "gamma11", "gamma22", "delta1", "delta2", "g", "alpha",
        "t_interact", "n_cut", "N_cut", "truncation",
    ];
    const PROBE: [&str; 5] = ["omega", "phi", "delta1_probe", "t_probe", "dt"];
    let probe_key = PROBE
        .iter()
        .find(|k| message.contains(&format!("probe.{k}")) || message.contains(&format!("probe.{k} ")));
    let line = if let Some(k) = probe_key {
        key_line(text, "probe", k)
    } else if message.contains("n_traj") {
        key_line(text, "probe", "n_traj")
    } else if let Some(k) = SYSTEM.iter().find(|k| message.contains(*k)) {
        let key = match *k {
            "alpha" | "truncation" => "alpha_re",
            "N_cut" => "n_cut",
            other => other,
        };
        key_line(text, "system", key)
    } else {
        0
    };
    Error::Config { line, message }
}
