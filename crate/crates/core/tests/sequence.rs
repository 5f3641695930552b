use photodet_core::hilbert::{
    coherent_state, displacement_operator, DensityMatrix, HilbertSpace, StateVector, C64,
};
use photodet_core::lindblad::{HamiltonianKind, SystemParams};
use photodet_core::metrics::{p_error_projective, wigner, GridSpec};
use photodet_core::optimizer::{minimize_error_with, Bounds, OptimizerOptions};
use photodet_core::sequence::{apply_unconditional_displacement, interaction_profile, run_interaction};

/// Headline couplings without resonator loss or dephasing, on a smaller window.
fn lossless(n_cut: usize) -> SystemParams {
    let mut p = SystemParams::headline().with_n_cut(n_cut).with_t_interact(20.0);
    p.kappa = 0.0;
    p.gamma11 = 0.0;
    p.gamma22 = 0.0;
    p
}

fn coherent(alpha: C64, n_cut: usize) -> DensityMatrix {
    let space = HilbertSpace::mode("resonator", n_cut).unwrap();
    coherent_state(alpha, &space).unwrap().to_density()
}

#[test]
fn lossless_vacuum_branch_leaves_the_field_coherent() {
    let p = lossless(16);
    let seq = run_interaction(&p, HamiltonianKind::Full).unwrap();
    let d = seq.rho_res_0.trace_distance(&coherent(p.alpha, 16)).unwrap();
    assert!(d < 1e-6, "{d:e}");
    let moved = apply_unconditional_displacement(&seq, p.alpha).unwrap();
    assert!(moved.rho_res_0.matrix()[(0, 0)].re >= 1.0 - 1e-6);
}

#[test]
fn uncoupled_atom_leaves_branches_identical() {
    let mut p = lossless(16);
    p.g = 0.0;
    let seq = run_interaction(&p, HamiltonianKind::Full).unwrap();
    assert!(seq.rho_res_0.trace_distance(&seq.rho_res_1).unwrap() < 1e-8);
}

#[test]
fn displacement_preserves_trace_and_inverts() {
    let p = SystemParams::headline();
    let seq = run_interaction(&p, HamiltonianKind::Full).unwrap();
    let fwd = apply_unconditional_displacement(&seq, p.alpha).unwrap();
    for (a, b) in [(&seq.rho_joint_0, &fwd.rho_joint_0), (&seq.rho_joint_1, &fwd.rho_joint_1)] {
        assert!((a.trace().re - b.trace().re).abs() < 1e-10);
        let m = b.matrix();
        assert!((m - m.adjoint()).iter().all(|z| z.norm() < 1e-10));
    }
    let back = apply_unconditional_displacement(&fwd, -p.alpha).unwrap();
    assert!(back.rho_joint_1.trace_distance(&seq.rho_joint_1).unwrap() < 1e-6);
    let same = apply_unconditional_displacement(&seq, C64::new(0.0, 0.0)).unwrap();
    assert_eq!(same.rho_joint_0.matrix(), seq.rho_joint_0.matrix());
    assert_eq!(same.rho_joint_1.matrix(), seq.rho_joint_1.matrix());

    // Testing against |α⟩ before the displacement equals testing against vacuum after it.
    let before = p_error_projective(&seq.rho_res_0, &seq.rho_res_1, p.alpha).unwrap();
    let after = p_error_projective(&fwd.rho_res_0, &fwd.rho_res_1, C64::new(0.0, 0.0)).unwrap();
    assert!((before - after).abs() < 1e-8, "{before} vs {after}");
}

#[test]
fn headline_error_has_an_interior_minimum_in_time() {
    let p = SystemParams::headline();
    let t_max = 10.0 / p.gamma_c;
    let step = 0.25;
    let prof = interaction_profile(&p, HamiltonianKind::Full, t_max, step, 1e-10).unwrap();
    let (t, e) = prof.best();
    assert!(t > prof.times[0] && t < t_max, "minimum at {t}");
    assert!(e < prof.p_e_m[0] && e < *prof.p_e_m.last().unwrap());

    let opts = OptimizerOptions {
        restarts: 1,
        step,
        prune_tol: 1e-10,
        ..OptimizerOptions::default()
    };
    let r = minimize_error_with(&p, HamiltonianKind::Full, &Bounds::point(p.delta1, p.delta2), &opts).unwrap();
    assert_eq!(r.t_interact, t);
    assert!((r.p_e_m - e).abs() < 1e-5);
    assert!(r.p_e_m >= r.p_e_opt - 1e-9);
}

fn grid(lo: f64, hi: f64, resolution: usize) -> GridSpec {
    GridSpec {
        x_range: (lo, hi),
        p_range: (lo, hi),
        resolution,
    }
}

#[test]
fn wigner_of_coherent_state_integrates_to_one() {
    let alpha = C64::new(3f64.sqrt(), 0.0);
    let w = wigner(&coherent(alpha, 30), &GridSpec::default()).unwrap();
    assert!((w.integral() - 1.0).abs() < 1e-2, "{}", w.integral());
    let (x, p, peak) = w.peak();
    assert!((x - alpha.re).abs() < 0.06 && p.abs() < 0.06);
    assert!((peak - 2.0 / std::f64::consts::PI).abs() < 0.02);
}

#[test]
fn wigner_translates_under_displacement() {
    let space = HilbertSpace::mode("resonator", 30).unwrap();
    let fock = StateVector::basis(&space, &[1]).unwrap().to_density();
    let coh = coherent(C64::new(0.4, -0.3), 30);
    let mix = DensityMatrix::new(space.clone(), fock.matrix() * C64::new(0.6, 0.0) + coh.matrix() * C64::new(0.4, 0.0))
        .unwrap();
    // Spacing 0.1: shift by 5 cells in x and 3 in p.
    let (sx, sp) = (5, 3);
    let beta = C64::new(0.1 * sx as f64, 0.1 * sp as f64);
    let moved = mix.conjugate_by(&displacement_operator(beta, &space).unwrap()).unwrap();
    let spec = grid(-2.0, 2.0, 41);
    let (w, wm) = (wigner(&mix, &spec).unwrap(), wigner(&moved, &spec).unwrap());
    let n = spec.resolution;
    for ix in 0..n - sx {
        for ip in 0..n - sp {
            let d = (wm.value(ix + sx, ip + sp) - w.value(ix, ip)).abs();
            assert!(d < 1e-8, "cell ({ix}, {ip}): {d:e}");
        }
    }
}
