//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! `PHOTODET_FULL_SCALE=1` runs the stochastic readout with 10⁴ trajectories per branch
//! instead of the desk-scale 2×10³.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use photodet_core::hilbert::{max_abs_diff, CMatrix, DensityMatrix, HilbertSpace, StateVector, C64, ATOM, SOURCE};
use photodet_core::lindblad::sector::{excitation_charges, SectorOptions, SectorPropagator};
use photodet_core::lindblad::{
    build_full_hamiltonian, evolve, interaction_model, HamiltonianKind, IntegratorConfig, LindbladModel, SystemParams,
};
use photodet_core::metrics::{p_error_optimal, p_error_projective};
use photodet_core::optimizer::{minimize_error, sweep_gamma_c, Bounds, Configuration, OptimizerOptions};
use photodet_core::probe::{EnsembleResult, ProbeContext};
use photodet_core::sequence::{
    apply_unconditional_displacement, initial_state, interaction_profile, run_interaction, run_interaction_with,
    InteractionSolver, SequenceResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn require(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn pp(x: f64) -> String {
    format!("{:.3}%", 100.0 * x)
}

/// Writes past the test-output capture so the lines always show.
fn report(n: usize, name: &str, elapsed: Duration, outcome: &Check) {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{tag} criterion {n} ({name}, {:.1} s): {detail}", elapsed.as_secs_f64()).unwrap();
    out.flush().unwrap();
}

fn errors(seq: &SequenceResult, alpha: C64) -> Result<(f64, f64), String> {
    let m = p_error_projective(&seq.rho_res_0, &seq.rho_res_1, alpha).map_err(fail)?;
    let o = p_error_optimal(&seq.rho_res_0, &seq.rho_res_1).map_err(fail)?;
    Ok((m, o))
}

/// `(T, P_E,M, P_E,opt)` at the best interaction time on the default sector grid.
fn best_over_window(p: &SystemParams, kind: HamiltonianKind) -> Result<(f64, f64, f64), String> {
    let InteractionSolver::Sector { step, prune_tol } = InteractionSolver::default() else {
        unreachable!()
    };
    let prof = interaction_profile(p, kind, 10.0 / p.gamma_c, step, prune_tol).map_err(fail)?;
    let (t, _) = prof.best();
    let seq = run_interaction_with(&p.clone().with_t_interact(t), kind, InteractionSolver::default()).map_err(fail)?;
    let (m, o) = errors(&seq, p.alpha)?;
    Ok((t, m, o))
}

fn criterion_1() -> Check {
    let mut rows = Vec::new();
    for n_cut in [30, 35] {
        rows.push(best_over_window(&SystemParams::comparison().with_n_cut(n_cut), HamiltonianKind::Full)?);
    }
    let (t, m, o) = rows[0];
    let dm = (rows[1].1 - m).abs();
    let dopt = (rows[1].2 - o).abs();
    let detail = format!(
        "T = {t:.3}, P_E,M = {}, P_E,opt = {}; N_cut 30→35 shifts {:.2e} / {:.2e} pp",
        pp(m),
        pp(o),
        100.0 * dm,
        100.0 * dopt
    );
    require(
        (m - 0.067).abs() <= 0.003 && (o - 0.046).abs() <= 0.003 && dm <= 5e-4 && dopt <= 5e-4 && t <= 100.0,
        detail,
    )
}

fn criterion_2(invariants: &mut Vec<String>) -> Check {
    let p = SystemParams::headline();
    let seq = run_interaction(&p, HamiltonianKind::Full).map_err(fail)?;
    check_state("headline joint 0", &seq.rho_joint_0, invariants);
    check_state("headline joint 1", &seq.rho_joint_1, invariants);
    let (m, o) = errors(&seq, p.alpha)?;
    let opt = minimize_error(&p, HamiltonianKind::Full, &Bounds::default()).map_err(fail)?;
    let detail = format!(
        "P_E,M = {}, P_E,opt = {}, gap {:.3} pp; search from default bounds: P_E,M = {} at (δ1, δ2, T) = ({:.4}, {:.3}, {:.2})",
        pp(m),
        pp(o),
        100.0 * (m - o),
        pp(opt.p_e_m),
        opt.delta1,
        opt.delta2,
        opt.t_interact
    );
    require(
        (m - 0.022).abs() <= 0.003 && m - o < 0.003 && m >= o && opt.p_e_m <= m + 1e-6,
        detail,
    )
}

fn probe_inputs(p: &SystemParams, kind: HamiltonianKind) -> Result<(ProbeContext, f64), String> {
    let seq = run_interaction(p, kind).map_err(fail)?;
    let p_opt = p_error_optimal(&seq.rho_res_0, &seq.rho_res_1).map_err(fail)?;
    let d = apply_unconditional_displacement(&seq, p.alpha).map_err(fail)?;
    let ctx = ProbeContext::new(p, kind, &d.rho_joint_0, &d.rho_joint_1).map_err(fail)?;
    Ok((ctx, p_opt))
}

/// Ensemble runs whose `P_E,M,real` is later held against the Helstrom bound.
struct RunRecord {
    label: String,
    p_real: f64,
    se: f64,
    p_opt: f64,
}

fn criterion_3(runs: &mut Vec<RunRecord>) -> Check {
    let full = std::env::var("PHOTODET_FULL_SCALE").is_ok_and(|v| v != "0" && !v.is_empty());
    let (n_traj, tol) = if full { (10_000, 0.006) } else { (2_000, 0.012) };
    let p = SystemParams::headline();
    let start = Instant::now();
    let (ctx, p_opt) = probe_inputs(&p, HamiltonianKind::Full)?;
    let ens = ctx.run_ensemble(n_traj).map_err(fail)?;
    let elapsed = start.elapsed();
    let se = ens.standard_error();
    runs.push(RunRecord {
        label: format!("headline, {n_traj} per branch"),
        p_real: ens.p_error_real,
        se,
        p_opt,
    });
    let workers = rayon::current_num_threads();
    let budget = if elapsed > Duration::from_secs(3600) {
        format!("; runtime {:.0} s exceeds the 1 h budget on {workers} worker(s)", elapsed.as_secs_f64())
    } else {
        format!("; runtime {:.0} s on {workers} worker(s)", elapsed.as_secs_f64())
    };
    let detail = format!(
        "n_traj = {n_traj} per branch, P_E,M,real = {} ± {} (target 2.4% ± {:.1} pp), threshold {:.3}, flipped {}{budget}",
        pp(ens.p_error_real),
        pp(se),
        100.0 * tol,
        ens.threshold,
        ens.flipped
    );
    require((ens.p_error_real - 0.024).abs() <= tol, detail)
}

fn criterion_4() -> Check {
    let bounds = Bounds::default();
    let opts = OptimizerOptions::default();
    let base = SystemParams::headline();
    let gammas = [0.2, 0.1, 0.05, 0.02];

    let disp = sweep_gamma_c(&base, &gammas, &[Configuration::DispersiveIdeal], &bounds, &opts).map_err(fail)?;
    let curve: Vec<f64> = disp.iter().map(|s| s.p_e_m).collect();
    let decreasing = curve.windows(2).all(|w| w[1] < w[0]);
    let a = decreasing && curve[3] < 0.01;

    let pair = sweep_gamma_c(
        &base,
        &[0.02],
        &[Configuration::FullLossy, Configuration::FullDephasing],
        &bounds,
        &opts,
    )
    .map_err(fail)?;
    let b = pair[0].p_e_m > pair[1].p_e_m;

    let ideal = sweep_gamma_c(&base, &[0.1], &[Configuration::FullIdeal], &bounds, &opts).map_err(fail)?;
    let s = &ideal[0];
    let fixed = base
        .clone()
        .with_gamma_c(0.1)
        .with_detunings(s.best_delta1, s.best_delta2)
        .with_t_interact(s.best_t_interact);
    let mut c = true;
    let mut shifted = Vec::new();
    for cfg in [Configuration::FullDephasing, Configuration::FullLossy] {
        let seq = run_interaction(&cfg.apply(&fixed), cfg.kind()).map_err(fail)?;
        let (m, _) = errors(&seq, base.alpha)?;
        c &= m >= s.p_e_m;
        shifted.push(pp(m));
    }

    let curve_s: Vec<String> = curve.iter().map(|v| pp(*v)).collect();
    let detail = format!(
        "(a) dispersive ideal over γc {gammas:?}: [{}] {}; (b) γc = 0.02 with κ {} vs without {} {}; \
         (c) γc = 0.1 ideal {} vs dephasing {} {}",
        curve_s.join(", "),
        if a { "ok" } else { "violated" },
        pp(pair[0].p_e_m),
        pp(pair[1].p_e_m),
        if b { "ok" } else { "violated" },
        pp(s.p_e_m),
        shifted.join(" / "),
        if c { "ok" } else { "violated" },
    );
    require(a && b && c, detail)
}

fn basis(space: &HilbertSpace, levels: &[usize]) -> DensityMatrix {
    StateVector::basis(space, levels).unwrap().to_density()
}

fn population(rho: &DensityMatrix, label: &str, level: usize) -> f64 {
    rho.partial_trace(label).unwrap().matrix()[(level, level)].re
}

fn grid(step: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| step * k as f64).collect()
}

fn quiet(n_cut: usize) -> SystemParams {
    let mut p = SystemParams::comparison().with_n_cut(n_cut);
    p.gamma01 = 0.0;
    p.gamma12 = 0.0;
    p.gamma_c = 0.0;
    p.alpha = C64::new(0.0, 0.0);
    p
}

fn check_state(label: &str, rho: &DensityMatrix, failures: &mut Vec<String>) {
    let tr = (rho.trace().re - 1.0).abs();
    let herm = max_abs_diff(rho.matrix(), &rho.matrix().adjoint());
    let min = rho.min_eigenvalue();
    if tr > 1e-6 || herm > 1e-9 || min < -1e-6 {
        failures.push(format!("{label}: trace err {tr:.1e}, hermiticity {herm:.1e}, min eigenvalue {min:.1e}"));
    }
}

fn jc_error() -> f64 {
    let g = 1.3;
    let mut p = quiet(4);
    p.g = g;
    p.delta1 = 0.0;
    p.delta2 = 0.0;
    let space = HilbertSpace::atom_resonator(4).unwrap();
    let h = build_full_hamiltonian(&p, false, &space).unwrap();
    let m = LindbladModel::new(h, vec![], None).unwrap();
    let out = evolve(&m, &basis(&space, &[1, 1]), &IntegratorConfig::rk4(1e-3, grid(0.05, 60))).unwrap();
    out.iter()
        .map(|(t, rho)| (population(rho, ATOM, 1) - (g * t).cos().powi(2)).abs())
        .fold(0.0, f64::max)
}

fn decay_error() -> f64 {
    let mut p = quiet(3);
    p.g = 0.0;
    p.gamma01 = 0.7;
    p.gamma_c = 0.3;
    let space = HilbertSpace::detector(3).unwrap();
    let m = interaction_model(&p, HamiltonianKind::Full, &space).unwrap();
    let cfg = IntegratorConfig::rk4(1e-3, grid(0.5, 20));
    let atom = evolve(&m, &basis(&space, &[0, 1, 0]), &cfg).unwrap();
    let source = evolve(&m, &basis(&space, &[1, 0, 0]), &cfg).unwrap();
    let a = atom
        .iter()
        .map(|(t, r)| (population(r, ATOM, 1) - (-p.gamma01 * t).exp()).abs());
    let s = source
        .iter()
        .map(|(t, r)| (population(r, SOURCE, 1) - (-p.gamma_c * t).exp()).abs());
    a.chain(s).fold(0.0, f64::max)
}

fn cascaded_toy_error() -> f64 {
    let mut p = SystemParams::headline().with_n_cut(3).with_t_interact(10.0);
    p.alpha = C64::new(0.8, 0.0);
    let space = HilbertSpace::detector(p.n_cut).unwrap();
    let model = interaction_model(&p, HamiltonianKind::Full, &space).unwrap();
    let compiled = model.compile();
    let d = space.dim();
    let mut l = DMatrix::<C64>::zeros(d * d, d * d);
    for k in 0..d * d {
        let mut e = CMatrix::zeros(d, d);
        e.as_mut_slice()[k] = C64::new(1.0, 0.0);
        for (r, v) in compiled.apply(&e).as_slice().iter().enumerate() {
            l[(r, k)] = *v;
        }
    }
    let prop = (l * C64::new(p.t_interact, 0.0)).exp();
    let charges = excitation_charges(&space).unwrap();
    let mut worst: f64 = 0.0;
    for photon in [false, true] {
        let rho0 = initial_state(&p, photon, &space).unwrap();
        let v = &prop * DVector::from_column_slice(rho0.matrix().as_slice());
        let exact = CMatrix::from_column_slice(d, d, v.as_slice());
        let InteractionSolver::Sector { step, .. } = InteractionSolver::default() else {
            unreachable!()
        };
        let opts = SectorOptions {
            step,
            prune_tol: 0.0,
            diagonal_only: false,
        };
        let mut sp = SectorPropagator::from_model(&model, &charges, &rho0, opts).unwrap();
        sp.advance_to(p.t_interact);
        worst = worst.max(max_abs_diff(&exact, &sp.matrix()));
        let dense = evolve(&model, &rho0, &IntegratorConfig::rk4(5e-4, vec![p.t_interact])).unwrap();
        worst = worst.max(max_abs_diff(&exact, dense[0].1.matrix()));
    }
    worst
}

/// Small probe configuration shared by the ensemble-mean and determinism checks.
fn small_probe(n_traj: usize, seed: u64) -> SystemParams {
    let mut p = SystemParams::headline().with_n_cut(8).with_t_interact(10.0);
    p.alpha = C64::new(1.0, 0.0);
    p.probe.t_probe = 20.0;
    p.probe.dt = 0.01;
    p.probe.n_traj = n_traj;
    p.probe.base_seed = seed;
    p
}

fn sme_mean_distance(invariants: &mut Vec<String>) -> Result<f64, String> {
    let p = small_probe(500, 1);
    let (ctx, _) = probe_inputs(&p, HamiltonianKind::Full)?;
    let mut worst: f64 = 0.0;
    for b in 0..2u8 {
        let me = ctx.deterministic_state(b).map_err(fail)?;
        let mut acc = me.matrix() * C64::new(0.0, 0.0);
        for i in 0..500 {
            let rho = ctx.final_state(b, i).map_err(fail)?;
            if i < 20 {
                let tr = (rho.trace().re - 1.0).abs();
                let herm = max_abs_diff(rho.matrix(), &rho.matrix().adjoint());
                if tr > 1e-9 || herm > 1e-9 {
                    invariants.push(format!("trajectory {b}/{i}: trace err {tr:.1e}, hermiticity {herm:.1e}"));
                }
            }
            acc += rho.matrix();
        }
        acc /= C64::new(500.0, 0.0);
        let mean = DensityMatrix::new_unchecked(me.space().clone(), acc).map_err(fail)?;
        worst = worst.max(mean.trace_distance(&me).map_err(fail)?);
    }
    Ok(worst)
}

fn helstrom_violations() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let space = HilbertSpace::mode("resonator", 12).unwrap();
    let random_state = |rank: usize, rng: &mut ChaCha8Rng| {
        let g = CMatrix::from_fn(12, rank, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let m = &g * g.adjoint();
        let tr = m.trace();
        DensityMatrix::new(space.clone(), m / tr).unwrap()
    };
    (0..200)
        .filter(|_| {
            let (r0, r1) = (rng.random_range(1..=12), rng.random_range(1..=12));
            let a = random_state(r0, &mut rng);
            let b = random_state(r1, &mut rng);
            let alpha = C64::from_polar(rng.random_range(0.0..1.7), rng.random_range(0.0..std::f64::consts::TAU));
            p_error_projective(&a, &b, alpha).unwrap() < p_error_optimal(&a, &b).unwrap() - 1e-12
        })
        .count()
}

fn criterion_5(runs: &mut Vec<RunRecord>, invariants: &mut Vec<String>) -> Check {
    let jc = jc_error();
    let decay = decay_error();
    let toy = cascaded_toy_error();
    let sme = sme_mean_distance(invariants)?;
    let helstrom = helstrom_violations();

    let p = small_probe(400, 5);
    let (ctx, p_opt) = probe_inputs(&p, HamiltonianKind::Full)?;
    let ens = ctx.run_ensemble(p.probe.n_traj).map_err(fail)?;
    runs.push(RunRecord {
        label: "small probe, 400 per branch".into(),
        p_real: ens.p_error_real,
        se: ens.standard_error(),
        p_opt,
    });
    let below: Vec<&RunRecord> = runs.iter().filter(|r| r.p_real < r.p_opt - 3.0 * r.se).collect();
    let runs_s: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: {} vs {}", r.label, pp(r.p_real), pp(r.p_opt)))
        .collect();

    let detail = format!(
        "JC {jc:.1e}; decay {decay:.1e}; cascaded toy {toy:.1e}; SME mean trace distance {sme:.3}; \
         Helstrom violations {helstrom}/200; real vs optimal [{}]; invariant failures {}",
        runs_s.join("; "),
        if invariants.is_empty() { "none".to_string() } else { invariants.join("; ") },
    );
    require(
        jc < 1e-6 && decay < 1e-7 && toy < 1e-8 && sme <= 0.05 && helstrom == 0 && below.is_empty() && invariants.is_empty(),
        detail,
    )
}

fn artifacts(ens: &EnsembleResult) -> Vec<u8> {
    let mut buf = Vec::new();
    ens.write_trajectories_csv(&mut buf).unwrap();
    ens.write_histogram_csv(&mut buf).unwrap();
    ens.write_summary(&mut buf).unwrap();
    buf
}

fn criterion_6() -> Check {
    let run = |threads: usize, seed: u64| -> Result<Vec<u8>, String> {
        let p = small_probe(64, seed);
        let (ctx, _) = probe_inputs(&p, HamiltonianKind::Full)?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(fail)?;
        let ens = pool.install(|| ctx.run_ensemble(p.probe.n_traj)).map_err(fail)?;
        Ok(artifacts(&ens))
    };
    let one = run(1, 42)?;
    let two = run(2, 42)?;
    let three = run(3, 42)?;
    let other = run(1, 43)?;
    let same = one == two && one == three;
    let detail = format!(
        "{} bytes; 1/2/3 workers identical: {same}; other seed differs: {}",
        one.len(),
        one != other
    );
    require(same && one != other, detail)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }

    let mut runs = Vec::new();
    let mut invariants = Vec::new();
    let mut failed = 0;
    let mut record = |n: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let outcome = f();
        report(n, name, start.elapsed(), &outcome);
        if outcome.is_err() {
            failed += 1;
        }
    };
    record(1, "comparison set regression", &mut criterion_1);
    record(2, "headline point", &mut || criterion_2(&mut invariants));
    record(3, "stochastic readout", &mut || criterion_3(&mut runs));
    record(4, "bandwidth trends", &mut criterion_4);
    record(5, "oracle suite", &mut || criterion_5(&mut runs, &mut invariants));
    record(6, "determinism", &mut criterion_6);
    drop(record);
    println!("acceptance: {} of 6 criteria passed", 6 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
