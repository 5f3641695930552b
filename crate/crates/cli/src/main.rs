//! `photodet`: batch front-end for the detector simulation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use photodet_core::artifact::{write_atomic, Header};
use photodet_core::config::{load, Resolved};
use photodet_core::lindblad::{rate_to_mhz, time_to_micros};
use photodet_core::metrics::{p_error_optimal, p_error_projective, wigner};
use photodet_core::optimizer::{minimize_error_with, sweep_gamma_c, write_sweep_csv};
use photodet_core::probe::{histogram, EnsembleResult, ProbeContext};
use photodet_core::sequence::{apply_unconditional_displacement, run_interaction_with};
use photodet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "photodet", version, about = "Sequential nonabsorbing microwave photon detector simulation")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Directory receiving the artifacts.
    #[arg(long, short, global = true, default_value = ".")]
    out: PathBuf,

    /// Size of the worker pool.
    #[arg(long, global = true, env = "PHOTODET_WORKERS")]
    workers: Option<usize>,

    /// Print times in microseconds and rates in MHz (γ01 = 2π·10 MHz). Artifacts keep natural units.
    #[arg(long, global = true)]
    si: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the interaction stage and write the error probabilities.
    Interact,
    /// Write Wigner grids of both resonator states.
    Wigner,
    /// Run the stochastic readout ensemble.
    Trajectories,
    /// Search detunings and interaction time.
    Optimize,
    /// Optimize every (γc, configuration) pair.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Interact => "interact",
            Command::Wigner => "wigner",
            Command::Trajectories => "trajectories",
            Command::Optimize => "optimize",
            Command::Sweep => "sweep",
        }
    }
}

enum Failure {
    Config(String),
    Numeric(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config { .. }
            | Error::InvalidParams(_)
            | Error::BoundViolation(_)
            | Error::TruncationOverflow { .. }
            | Error::DegenerateDetuning => Failure::Config(msg),
            e if e.is_numerical() => Failure::Numeric(msg),
            _ => Failure::Other(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("photodet: configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("photodet: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("photodet: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let cfg = load(&text)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    let header = Header::new(cli.command.name(), &cfg);
    let files = match cli.command {
        Command::Interact => interact(&cfg, cli.si)?,
        Command::Wigner => wigner_grids(&cfg)?,
        Command::Trajectories => trajectories(&cfg, cli.si)?,
        Command::Optimize => optimize(&cfg, cli.si)?,
        Command::Sweep => sweep(&cfg, cli.si)?,
    };
    fs::create_dir_all(&cli.out)?;
    for (name, body) in &files {
        write_artifact(&cli.out.join(name), &header, body)?;
    }
    Ok(())
}

fn write_artifact(path: &Path, header: &Header, body: &[u8]) -> Result<(), Failure> {
    write_atomic(path, header, |w| w.write_all(body))?;
    println!("wrote {}", path.display());
    Ok(())
}

type Files = Vec<(&'static str, Vec<u8>)>;

fn time(t: f64, si: bool) -> String {
    if si {
        format!("{:.11e} us", time_to_micros(t))
    } else {
        format!("{t:.11e} /gamma01")
    }
}

fn rate(r: f64, si: bool) -> String {
    if si {
        format!("{:.11e} MHz", rate_to_mhz(r))
    } else {
        format!("{r:.11e} gamma01")
    }
}

fn interact(cfg: &Resolved, si: bool) -> Result<Files, Failure> {
    let p = &cfg.params;
    let seq = run_interaction_with(p, cfg.kind, cfg.solver)?;
    let p_e_m = p_error_projective(&seq.rho_res_0, &seq.rho_res_1, p.alpha)?;
    let p_e_opt = p_error_optimal(&seq.rho_res_0, &seq.rho_res_1)?;
    let chi = p.chi()?;
    let mut s = String::new();
    writeln!(s, "p_e_m = {p_e_m:.11e}").unwrap();
    writeln!(s, "p_e_opt = {p_e_opt:.11e}").unwrap();
    writeln!(s, "chi = {chi:.11e}").unwrap();
    writeln!(s, "t_interact = {:.11e}", seq.t_interact_used).unwrap();
    writeln!(s, "source_residual = {:.11e}", seq.source_residual).unwrap();
    println!("P_E,M   = {p_e_m:.11e}");
    println!("P_E,opt = {p_e_opt:.11e}");
    println!("chi     = {}", rate(chi, si));
    println!("T       = {}", time(seq.t_interact_used, si));
    Ok(vec![("interact.toml", s.into_bytes())])
}

fn wigner_grids(cfg: &Resolved) -> Result<Files, Failure> {
    let p = &cfg.params;
    let mut seq = run_interaction_with(p, cfg.kind, cfg.solver)?;
    if cfg.wigner_displaced {
        seq = apply_unconditional_displacement(&seq, p.alpha)?;
    }
    let mut files = Files::new();
    for (name, rho) in [("wigner_0.csv", &seq.rho_res_0), ("wigner_1.csv", &seq.rho_res_1)] {
        let grid = wigner(rho, &cfg.grid)?;
        if grid.truncation_warning {
            eprintln!("photodet: warning: {name} grid reaches beyond the Fock cutoff");
        }
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)?;
        files.push((name, buf));
    }
    Ok(files)
}

fn trajectories(cfg: &Resolved, si: bool) -> Result<Files, Failure> {
    let p = &cfg.params;
    let seq = run_interaction_with(p, cfg.kind, cfg.solver)?;
    let p_e_opt = p_error_optimal(&seq.rho_res_0, &seq.rho_res_1)?;
    let d = apply_unconditional_displacement(&seq, p.alpha)?;
    let ctx = ProbeContext::new(p, cfg.kind, &d.rho_joint_0, &d.rho_joint_1)?;
    let mut ens: EnsembleResult = ctx.run_ensemble(p.probe.n_traj)?;
    if cfg.histogram_bins != ens.histogram.count0.len() {
        ens.histogram = histogram(&ens.s0, &ens.s1, cfg.histogram_bins);
    }
    let (mut traj, mut hist, mut summary) = (Vec::new(), Vec::new(), Vec::new());
    ens.write_trajectories_csv(&mut traj)?;
    ens.write_histogram_csv(&mut hist)?;
    ens.write_summary(&mut summary)?;
    writeln!(summary, "p_e_opt = {p_e_opt:.11e}")?;
    println!(
        "P_E,M,real = {:.11e} +/- {:.3e} (threshold {:.11e}, P_E,opt = {:.11e})",
        ens.p_error_real,
        ens.standard_error(),
        ens.threshold,
        p_e_opt
    );
    println!("T_probe    = {}", time(p.probe.t_probe, si));
    Ok(vec![
        ("trajectories.csv", traj),
        ("histogram.csv", hist),
        ("ensemble.toml", summary),
    ])
}

fn optimize(cfg: &Resolved, si: bool) -> Result<Files, Failure> {
    let r = minimize_error_with(&cfg.params, cfg.kind, &cfg.bounds, &cfg.optimizer)?;
    let mut s = String::new();
    writeln!(s, "delta1 = {:.11e}", r.delta1).unwrap();
    writeln!(s, "delta2 = {:.11e}", r.delta2).unwrap();
    writeln!(s, "t_interact = {:.11e}", r.t_interact).unwrap();
    writeln!(s, "p_e_m = {:.11e}", r.p_e_m).unwrap();
    writeln!(s, "p_e_opt = {:.11e}", r.p_e_opt).unwrap();
    writeln!(s, "evaluations = {}", r.evaluations).unwrap();
    writeln!(s, "converged = {}", r.converged).unwrap();
    writeln!(s, "restart_gap = {:.11e}", r.restart_gap).unwrap();
    if r.restart_gap > 1e-3 {
        eprintln!("photodet: warning: best restarts differ by {:.3} pp", 100.0 * r.restart_gap);
    }
    println!("delta1 = {}", rate(r.delta1, si));
    println!("delta2 = {}", rate(r.delta2, si));
    println!("T      = {}", time(r.t_interact, si));
    println!("P_E,M  = {:.11e}, P_E,opt = {:.11e}", r.p_e_m, r.p_e_opt);
    Ok(vec![("optimum.toml", s.into_bytes())])
}

fn sweep(cfg: &Resolved, si: bool) -> Result<Files, Failure> {
    let points = sweep_gamma_c(
        &cfg.params,
        &cfg.sweep_gamma_c,
        &cfg.sweep_configurations,
        &cfg.bounds,
        &cfg.optimizer,
    )?;
    for pt in &points {
        println!(
            "gamma_c = {}  {:<22} P_E,M = {:.6e}",
            rate(pt.gamma_c, si),
            pt.config.as_str(),
            pt.p_e_m
        );
    }
    let mut buf = Vec::new();
    write_sweep_csv(&points, &mut buf)?;
    Ok(vec![("sweep.csv", buf)])
}
