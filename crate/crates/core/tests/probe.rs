use photodet_core::hilbert::{coherent_state, DensityMatrix, HilbertSpace, StateVector, C64, ATOM, RESONATOR};
use photodet_core::lindblad::{HamiltonianKind, SystemParams};
use photodet_core::probe::{
    classify_ensemble, dense_trajectory, error_at_threshold, matched_filter_and_integrate, noise_rng, ProbeContext,
};
use photodet_core::sequence::{apply_unconditional_displacement, run_interaction};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// Headline rates on a small resonator.
fn small(dt: f64, t_probe: f64) -> SystemParams {
    let mut p = SystemParams::headline().with_n_cut(8).with_t_interact(10.0);
    p.alpha = C64::new(1.0, 0.0);
    p.probe.t_probe = t_probe;
    p.probe.dt = dt;
    p
}

fn inputs(p: &SystemParams, kind: HamiltonianKind) -> (DensityMatrix, DensityMatrix) {
    let seq = run_interaction(p, kind).unwrap();
    let d = apply_unconditional_displacement(&seq, p.alpha).unwrap();
    (d.rho_joint_0, d.rho_joint_1)
}

fn context(p: &SystemParams, kind: HamiltonianKind) -> ProbeContext {
    let (r0, r1) = inputs(p, kind);
    ProbeContext::new(p, kind, &r0, &r1).unwrap()
}

fn ground_atom(p: &SystemParams, beta: C64) -> DensityMatrix {
    let space = HilbertSpace::atom_resonator(p.n_cut).unwrap();
    let atom = StateVector::basis(&space.subsystem(ATOM).unwrap(), &[0]).unwrap();
    let res = coherent_state(beta, &space.subsystem(RESONATOR).unwrap()).unwrap();
    StateVector::product(&space, &[atom, res]).unwrap().to_density()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn diagonal(r: &DensityMatrix) -> Vec<f64> {
    (0..r.matrix().nrows()).map(|i| r.matrix()[(i, i)].re).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// The dispersive model keeps plain Euler–Maruyama on the full matrix stable.
#[test]
fn kernel_follows_dense_euler_maruyama_path() {
    let kind = HamiltonianKind::Dispersive;
    let p = small(6.25e-4, 20.0);
    let (r0, r1) = inputs(&p, kind);
    let ctx = ProbeContext::new(&p, kind, &r0, &r1).unwrap();
    let mut rng = noise_rng(3, 1, 0);
    let z: Vec<f64> = (0..ctx.n_steps()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut it = z.iter().copied();
    let (s_kernel, rho_kernel) = ctx.run_with_noise(1, || it.next().unwrap()).unwrap();
    let mut it = z.iter().copied();
    let dense = dense_trajectory(&p, kind, &r1, ctx.filter(), || it.next().unwrap()).unwrap();
    assert!((s_kernel - dense.s).abs() < 5e-3, "S {s_kernel} vs {}", dense.s);
    let dp = max_diff(&diagonal(&rho_kernel), &diagonal(&dense.state));
    assert!(dp < 5e-3, "population difference {dp}");
}

#[test]
fn final_states_are_normalized_and_hermitian() {
    let p = small(0.01, 20.0);
    let ctx = context(&p, HamiltonianKind::Full);
    for b in 0..2 {
        let rho = ctx.final_state(b, 11).unwrap();
        let m = rho.matrix();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!(rho.trace().im.abs() < 1e-12);
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(herm < 1e-9, "hermiticity {herm}");
        assert!(rho.min_eigenvalue() > -1e-3);
    }
}

#[test]
fn ensemble_average_state_matches_master_equation() {
    let p = small(0.01, 20.0);
    let ctx = context(&p, HamiltonianKind::Full);
    for b in 0..2u8 {
        let me = ctx.deterministic_state(b).unwrap();
        let mut acc = me.matrix() * C64::new(0.0, 0.0);
        for i in 0..500 {
            acc += ctx.final_state(b, i).unwrap().matrix();
        }
        acc /= C64::new(500.0, 0.0);
        let mean = DensityMatrix::new_unchecked(me.space().clone(), acc).unwrap();
        let d = mean.trace_distance(&me).unwrap();
        assert!(d <= 0.05, "branch {b}: trace distance {d}");
    }
}

#[test]
fn zero_drive_on_ground_atom_gives_zero_current() {
    let mut p = small(0.01, 20.0);
    p.probe.omega = 0.0;
    let a = ground_atom(&p, C64::new(0.0, 0.0));
    let b = ground_atom(&p, C64::new(1.0, -0.5));
    let ctx = ProbeContext::new(&p, HamiltonianKind::Full, &a, &b).unwrap();
    let r = ctx.reference();
    assert!(r.i0.iter().chain(&r.i1).all(|v| v.abs() < 1e-14));
    assert!(ctx.filter().iter().all(|h| *h == 0.0));
    assert_eq!(ctx.run_trajectory(0, 4).unwrap().s, 0.0);
}

#[test]
fn identical_inputs_give_identical_references() {
    let p = small(0.01, 20.0);
    let (r0, _) = inputs(&p, HamiltonianKind::Full);
    let ctx = ProbeContext::new(&p, HamiltonianKind::Full, &r0, &r0).unwrap();
    assert_eq!(ctx.reference().i0, ctx.reference().i1);
    assert_eq!(ctx.reference().separation(), 0.0);
    assert_eq!(ctx.run_trajectory(1, 2).unwrap().s, 0.0);
}

// With no drive the record is pure noise: against h = 1 the integral has mean 0 and variance T.
#[test]
fn undriven_record_is_white_noise() {
    let mut p = small(0.01, 20.0);
    p.probe.omega = 0.0;
    let a = ground_atom(&p, C64::new(0.5, 0.0));
    let ctx = ProbeContext::new(&p, HamiltonianKind::Full, &a, &a).unwrap();
    let n = ctx.n_steps();
    let (ones, zeros) = (vec![1.0; n], vec![0.0; n]);
    let s: Vec<f64> = (0..400)
        .map(|i| {
            let rec = ctx.run_trajectory_recorded(0, i, 1).unwrap();
            let current = rec.current_samples.unwrap();
            matched_filter_and_integrate(&current, &ones, &zeros, p.probe.dt).unwrap()
        })
        .collect();
    let (m, sd) = mean_sd(&s);
    let t = p.probe.t_probe;
    assert!(m.abs() < 3.0 * t.sqrt() / 20.0, "mean {m}");
    let ratio = sd * sd / t;
    assert!((ratio - 1.0).abs() < 0.3, "variance ratio {ratio}");
}

#[test]
fn mean_filtered_integral_matches_deterministic_integral() {
    let p = small(0.01, 50.0);
    let ctx = context(&p, HamiltonianKind::Full);
    for b in 0..2u8 {
        let s: Vec<f64> = (0..400).map(|i| ctx.run_trajectory(b, i).unwrap().s).collect();
        let (m, sd) = mean_sd(&s);
        let expected = ctx.reference().expected_s(b);
        let se = sd / (s.len() as f64).sqrt();
        assert!((m - expected).abs() < 3.0 * se, "branch {b}: {m} vs {expected} (se {se})");
    }
}

#[test]
fn same_seed_same_record() {
    let p = small(0.01, 20.0);
    let ctx = context(&p, HamiltonianKind::Full);
    let a = ctx.run_trajectory_recorded(1, 9, 50).unwrap();
    let b = ctx.run_trajectory_recorded(1, 9, 50).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.s, ctx.run_trajectory(1, 9).unwrap().s);
    assert_ne!(a.s, ctx.run_trajectory(1, 10).unwrap().s);
    assert_ne!(a.s, ctx.run_trajectory(0, 9).unwrap().s);
}

/// `P_E,M,real` at `dt` and `dt/2` on shared Brownian paths: each coarse increment is
/// the sum of two fine ones.
#[test]
fn weak_convergence_in_the_step() {
    let n_traj = 2000;
    let t_probe = 60.0;
    let fine = small(0.005, t_probe);
    let coarse = small(0.01, t_probe);
    let (r0, r1) = inputs(&fine, HamiltonianKind::Full);
    let ctx_f = ProbeContext::new(&fine, HamiltonianKind::Full, &r0, &r1).unwrap();
    let ctx_c = ProbeContext::new(&coarse, HamiltonianKind::Full, &r0, &r1).unwrap();
    assert_eq!(ctx_f.n_steps(), 2 * ctx_c.n_steps());
    let run = |b: u8, i: u64| {
        let mut rng = noise_rng(fine.probe.base_seed, b, i);
        let z: Vec<f64> = (0..ctx_f.n_steps()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut it = z.iter().copied();
        let (sf, _) = ctx_f.run_with_noise(b, || it.next().unwrap()).unwrap();
        let mut pairs = z.chunks(2).map(|c| (c[0] + c[1]) / 2f64.sqrt());
        let (sc, _) = ctx_c.run_with_noise(b, || pairs.next().unwrap()).unwrap();
        (sf, sc)
    };
    let mut s = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for b in 0..2u8 {
        for i in 0..n_traj {
            let (sf, sc) = run(b, i);
            s[0][b as usize].push(sf);
            s[1][b as usize].push(sc);
        }
    }
    let pf = classify_ensemble(&s[0][0], &s[0][1]).unwrap().p_error_real;
    let pc = classify_ensemble(&s[1][0], &s[1][1]).unwrap().p_error_real;
    let se = (0.5 * pc * (1.0 - pc) / n_traj as f64).sqrt();
    assert!(pc > 0.02 && pc < 0.48, "configuration should be neither trivial nor hopeless: {pc}");
    assert!((pf - pc).abs() < se, "dt/2: {pf}, dt: {pc}, se {se}");
}

fn sample_lists() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let v = || prop::collection::vec(prop_oneof![(-20i32..20).prop_map(f64::from), -20.0..20.0f64], 1..40);
    (v(), v())
}

proptest! {
    #[test]
    fn midpoint_scan_is_optimal((s0, s1) in sample_lists()) {
        let c = classify_ensemble(&s0, &s1).unwrap();
        prop_assert!((error_at_threshold(&s0, &s1, c.threshold, c.flipped) - c.p_error_real).abs() < 1e-12);
        // A threshold sitting on a sample assigns it to neither side; those are skipped.
        let on_sample = |t: f64| s0.iter().chain(&s1).any(|&v| v == t);
        let mut brute = f64::INFINITY;
        for k in 0..=8000 {
            let thr = -21.0 + 42.0 * k as f64 / 8000.0;
            if !on_sample(thr) {
                brute = brute.min(error_at_threshold(&s0, &s1, thr, c.flipped));
            }
        }
        let mut all: Vec<f64> = s0.iter().chain(&s1).copied().collect();
        all.sort_by(f64::total_cmp);
        for w in all.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            if !on_sample(thr) {
                brute = brute.min(error_at_threshold(&s0, &s1, thr, c.flipped));
            }
        }
        prop_assert!(c.p_error_real <= brute + 1e-12, "scan {} vs brute {}", c.p_error_real, brute);
        prop_assert!(c.p_error_real >= 0.0 && c.p_error_real <= 0.5);
    }
}
