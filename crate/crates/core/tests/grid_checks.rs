use proptest::prelude::*;
use tic_core::equilibrium::{check_equilibrium, Perturbation, Verdict};
use tic_core::grid::{
    build_equivalent_standard, scaling_check, solve_extended, solve_simplified, solve_standard, ExtendedProblem, GridSolution,
    GridSpec, SimplifiedProblem,
};
use tic_core::mean_variance::{equivalent_standard_objective, solve_mv, MvParams};
use tic_core::reward::{estimate_f, estimate_g, Sense};
use tic_core::sde::{ControlModel, SimConfig};
use tic_core::Error;

fn desk() -> MvParams {
    MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0).unwrap()
}

fn mv_grid(nx: usize) -> (ExtendedProblem, GridSpec, GridSolution) {
    let p = desk();
    let prob = p.extended_problem(0.0, 2.0).unwrap();
    let g = GridSpec::with_cfl_nt(0.2, 5.0, nx, 101, &prob.model).unwrap();
    let s = solve_extended(&prob, &g).unwrap();
    (prob, g, s)
}

#[test]
fn mean_variance_grid_matches_closed_form() {
    let (_, g, s) = mv_grid(201);
    let cf = solve_mv(&desk()).unwrap();
    let v = s.value_at(0.0, 1.0);
    assert!((v / cf.value(0.0, 1.0) - 1.0).abs() < 0.01, "V(0,1) = {v}");
    let tol = (0.02 * cf.u_hat(0.0, 1.0)).max(s.controls[1] - s.controls[0]);
    for i in g.interior_half() {
        assert!((s.u_hat[[0, i]] - cf.u_hat(0.0, s.xs[i])).abs() <= tol, "u at x = {}", s.xs[i]);
    }
    assert!(s.diagnostics.cfl_margin >= 1.0);
    assert!(s.diagnostics.boundary_width > 0);
    assert!(s.diagnostics.diagonal_gap <= 5.0 * s.diagnostics.scheme_tol);
}

#[test]
fn refinement_reduces_error() {
    let cf = solve_mv(&desk()).unwrap().value(0.0, 1.0);
    let e1 = (mv_grid(101).2.value_at(0.0, 1.0) - cf).abs();
    let e2 = (mv_grid(201).2.value_at(0.0, 1.0) - cf).abs();
    assert!(e1 / e2 >= 1.7, "errors {e1} then {e2}");
}

#[test]
fn simplified_solver_agrees_with_extended() {
    let (_, g, s) = mv_grid(201);
    let simp = solve_simplified(&desk().simplified_problem(0.0, 2.0).unwrap(), &g).unwrap();
    let tol = 2.0 * s.diagnostics.scheme_tol;
    for n in [0, g.nt / 2] {
        for i in g.interior_half() {
            assert!((simp.v[[n, i]] - s.v[[n, i]]).abs() <= tol);
        }
    }
}

fn drifted() -> ControlModel {
    ControlModel::scalar(|_, x, u| 0.05 * x + 0.1 * u, |_, _, u| 0.3 * u, -1.0, 1.0, 1.0).unwrap()
}

#[test]
fn linear_wrapper_is_the_standard_sweep() {
    let g = GridSpec::with_cfl_nt(-2.0, 2.0, 81, 21, &drifted()).unwrap();
    let f = |y: f64| -(y - 0.5).powi(2);
    let exact = SimplifiedProblem::new(drifted(), f, Sense::Maximize)
        .unwrap()
        .wrapper(|m| 0.3 * m)
        .curvature(|_| 0.0)
        .running(|s, y, u| -0.1 * u * u + 0.01 * s * y);
    let a = solve_simplified(&exact, &g).unwrap();
    let (v, u) = solve_standard(&drifted(), &g, Sense::Maximize, |s, y, u| -0.1 * u * u + 0.01 * s * y, move |y| f(y) + 0.3 * y).unwrap();
    assert_eq!(a.v, v);
    assert_eq!(a.u_hat, u);
    // With the curvature left to finite differences the correction is rounding only.
    let fd = SimplifiedProblem::new(drifted(), f, Sense::Maximize)
        .unwrap()
        .wrapper(|m| 0.3 * m)
        .running(|s, y, u| -0.1 * u * u + 0.01 * s * y);
    let b = solve_simplified(&fd, &g).unwrap();
    let gap = (&b.v - &v).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn equivalent_problem_reproduces_value() {
    let p = desk();
    let (prob, g, s) = mv_grid(201);
    let eq = build_equivalent_standard(&prob, &s).unwrap();
    assert!(eq.max_rel_gap <= 0.01, "gap {}", eq.max_rel_gap);
    // Kernel against the analytic running penalty, relative to its range.
    let k = equivalent_standard_objective(&p);
    let mut sup = 0.0f64;
    let mut dev = 0.0f64;
    for n in (0..g.nt).step_by(16) {
        for i in g.interior_half().step_by(8) {
            for (a, &u) in s.controls.iter().enumerate() {
                let want = k(s.times[n], u);
                sup = sup.max(want.abs());
                dev = dev.max((eq.k[[n, i, a]] - want).abs());
            }
        }
    }
    assert!(dev <= 0.05 * sup, "kernel deviation {dev} of {sup}");
}

#[test]
fn consistent_problem_has_no_correction() {
    let prob = ExtendedProblem::new(drifted(), |_, y| -(y - 0.5).powi(2), Sense::Maximize)
        .unwrap()
        .running(|_, _, y, u| -0.1 * u * u - 0.05 * y * y);
    let g = GridSpec::with_cfl_nt(-2.0, 2.0, 61, 21, &drifted()).unwrap();
    let s = solve_extended(&prob, &g).unwrap();
    let eq = build_equivalent_standard(&prob, &s).unwrap();
    assert!(eq.max_correction <= s.diagnostics.scheme_tol, "{}", eq.max_correction);
    assert_eq!(eq.max_correction, 0.0);
}

#[test]
fn scaling_invariance() {
    let (prob, g, _) = mv_grid(101);
    let two = scaling_check(&prob, |_| 2.0, &g).unwrap();
    assert_eq!(two.argmax_agreement, 1.0);
    assert!(two.max_ratio_dev <= 1e-14);
    for rep in [scaling_check(&prob, |x| x, &g).unwrap(), scaling_check(&prob, |x: f64| (0.1 * x).exp(), &g).unwrap()] {
        assert!(rep.argmax_agreement >= 0.99 && rep.max_ratio_dev <= 0.01, "{rep:?}");
    }
    assert!(matches!(scaling_check(&prob, |x| x - 1.0, &g), Err(Error::Domain(_))));
}

#[test]
fn constant_weight_is_exact_node_by_node() {
    let (prob, g, s) = mv_grid(101);
    let w = solve_extended(&prob.weighted(|_| 2.0), &g).unwrap();
    assert_eq!(w.u_hat, s.u_hat);
    assert_eq!(w.v, s.v.mapv(|v| 2.0 * v));
}

#[test]
fn fields_are_expectations_under_the_grid_law() {
    let (prob, _, s) = mv_grid(201);
    let law = s.law();
    let spec = prob.to_reward_spec();
    let cfg = SimConfig::new(20_000, 200, 42);
    let tol = s.diagnostics.scheme_tol;
    for x in [0.8, 1.0, 1.5, 2.0, 3.0] {
        let g = estimate_g(&prob.model, &law, |y| y, 0.0, x, &cfg).unwrap();
        assert!((g.mean - s.g_at(0.0, x)).abs() <= (3.0 * g.std_err).max(tol));
        let f = estimate_f(&prob.model, &law, &spec, 0.0, x, 0.0, x, &cfg).unwrap();
        let fg = s.f_at_level(0, x, x).unwrap();
        assert!((f.mean - fg).abs() <= (3.0 * f.std_err).max(tol), "f at {x}: {} vs {fg}", f.mean);
    }
}

#[test]
fn grid_control_passes_spike_test() {
    let (prob, _, s) = mv_grid(201);
    let law = s.law();
    let perturb = vec![
        Perturbation::new("plus one", law.offset([1.0, 0.0])),
        Perturbation::new("doubled", law.scale([2.0, 1.0])),
    ];
    let reps = check_equilibrium(
        &prob.model,
        &law,
        &perturb,
        &prob.to_reward_spec(),
        &[(0.0, 1.0), (0.5, 2.0)],
        &[0.2, 0.1, 0.05, 0.025],
        &SimConfig::new(20_000, 200, 42),
        3.0,
    )
    .unwrap();
    for r in &reps {
        assert_ne!(r.verdict, Verdict::Fail, "{r:?}");
    }
}

#[test]
fn unstable_grid_is_refused() {
    let prob = desk().extended_problem(0.0, 2.0).unwrap();
    let err = solve_extended(&prob, &GridSpec::new(0.2, 5.0, 201, 50, 11)).unwrap_err();
    assert!(matches!(err, Error::Cfl { .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn terminal_rows_are_the_rewards(c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, c2 in 0.0f64..2.0) {
        let prob = ExtendedProblem::new(drifted(), move |a, y| c0 * a * y + c1 * y, Sense::Maximize)
            .unwrap()
            .wrapper(move |a, m| c2 * a * m * m)
            .transform(|y| y.sin());
        let g = GridSpec::with_cfl_nt(-1.0, 1.0, 21, 5, &drifted()).unwrap();
        let s = solve_extended(&prob, &g).unwrap();
        let last = g.nt - 1;
        for (i, &x) in s.xs.iter().enumerate() {
            prop_assert_eq!(s.g[[last, i]], x.sin());
            prop_assert_eq!(s.v[[last, i]], (c0 * x * x + c1 * x) + c2 * x * x.sin() * x.sin());
        }
    }

    #[test]
    fn value_without_wrapper_is_the_diagonal(c in -1.0f64..1.0, k in 0.0f64..1.0) {
        let prob = ExtendedProblem::new(drifted(), move |a, y| -(y - c * a).powi(2), Sense::Maximize)
            .unwrap()
            .running(move |a, _, y, u| -k * u * u - 0.1 * a * y);
        let g = GridSpec::with_cfl_nt(-1.0, 1.0, 21, 5, &drifted()).unwrap();
        let s = solve_extended(&prob, &g).unwrap();
        prop_assert_eq!(&s.v, s.diag.as_ref().unwrap());
    }
}
