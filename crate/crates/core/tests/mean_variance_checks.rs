use tic_core::equilibrium::{check_equilibrium, Perturbation, Verdict};
use tic_core::mean_variance::{solve_mv, solve_mv_wealth, MvParams};
use tic_core::reward::{estimate_f, estimate_g, estimate_j};
use tic_core::sde::{simulate_paths, FeedbackLaw, SimConfig};
use tic_core::stats::mean_and_se;

const H: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn desk() -> MvParams {
    MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0).unwrap()
}

fn perturbations(law: &FeedbackLaw) -> Vec<Perturbation> {
    vec![
        Perturbation::new("plus one", law.offset([1.0, 0.0])),
        Perturbation::new("minus one", law.offset([-1.0, 0.0])),
        Perturbation::new("doubled", law.scale([2.0, 1.0])),
    ]
}

#[test]
fn value_is_reproduced_by_simulation() {
    let p = desk();
    let s = solve_mv(&p).unwrap();
    let est = estimate_j(&p.model(-50.0, 50.0).unwrap(), &s.law(), &p.reward(), 0.0, 1.0, &SimConfig::new(100_000, 200, 42)).unwrap();
    assert!(est.std_err > 0.0);
    assert!((est.mean - s.value(0.0, 1.0)).abs() <= 3.0 * est.std_err, "{est:?} vs {}", s.value(0.0, 1.0));
}

#[test]
fn g_and_f_match_their_expectations() {
    let p = desk();
    let s = solve_mv(&p).unwrap();
    let m = p.model(-50.0, 50.0).unwrap();
    let cfg = SimConfig::new(20_000, 100, 3);
    for (t, x) in [(0.0, 1.0), (0.2, 0.5), (0.5, 2.0), (0.7, 1.5), (0.9, 3.0)] {
        let g = estimate_g(&m, &s.law(), |y| y, t, x, &cfg).unwrap();
        assert!((g.mean - s.g(t, x)).abs() <= 3.0 * g.std_err, "g at ({t},{x})");
        // V = f + (γ/2)g², with f the expected terminal utility.
        let f = estimate_f(&m, &s.law(), &p.reward(), t, x, t, x, &cfg).unwrap();
        let want = s.value(t, x) - 0.5 * p.gamma * s.g(t, x).powi(2);
        assert!((f.mean - want).abs() <= 3.0 * f.std_err, "f at ({t},{x}): {} vs {want}", f.mean);
    }
}

#[test]
fn tower_property_for_g() {
    let p = desk();
    let s = solve_mv(&p).unwrap();
    let n = 100;
    let b = simulate_paths(&p.model(-50.0, 50.0).unwrap(), &s.law(), 0.0, 1.0, &SimConfig::new(20_000, n, 9)).unwrap();
    let mid: Vec<f64> = b.states.column(n / 2).iter().map(|x| s.g(0.5, *x)).collect();
    let (m, se) = mean_and_se(&mid);
    assert!((m - s.g(0.0, 1.0)).abs() <= 3.0 * se);
}

#[test]
fn closed_form_control_is_an_equilibrium() {
    let p = desk();
    let s = solve_mv(&p).unwrap();
    let law = s.law();
    let reps = check_equilibrium(
        &p.model(-50.0, 50.0).unwrap(),
        &law,
        &perturbations(&law),
        &p.reward(),
        &[(0.0, 1.0), (0.5, 2.0)],
        &H,
        &SimConfig::new(40_000, 200, 42),
        3.0,
    )
    .unwrap();
    for r in &reps {
        assert_ne!(r.verdict, Verdict::Fail, "{r:?}");
    }
}

#[test]
fn zero_control_is_not_an_equilibrium() {
    let p = desk();
    let s = solve_mv(&p).unwrap();
    let reps = check_equilibrium(
        &p.model(-50.0, 50.0).unwrap(),
        &FeedbackLaw::constant([0.0, 0.0]),
        &[Perturbation::new("closed form", s.law())],
        &p.reward(),
        &[(0.0, 1.0)],
        &H,
        &SimConfig::new(100_000, 200, 42),
        3.0,
    )
    .unwrap();
    let r = &reps[0];
    assert_eq!(r.verdict, Verdict::Fail, "{r:?}");
    for k in 2..4 {
        assert!(r.deltas[k] < -3.0 * r.std_errs[k]);
    }
}

#[test]
fn wealth_dependent_variant() {
    let p = desk();
    let w = solve_mv_wealth(&p, 2000).unwrap();
    let w2 = solve_mv_wealth(&p, 4000).unwrap();
    for t in [0.0, 0.3, 0.8] {
        assert!((w.a(t) - w2.a(t)).abs() <= 1e-8 && (w.b(t) - w2.b(t)).abs() <= 1e-8);
        let k = w.u_hat(t, 1.0);
        for x in [0.5, 2.0, 7.0] {
            assert!((w.u_hat(t, x) / x - k).abs() <= 1e-12);
        }
    }
    let m = p.model(-50.0, 50.0).unwrap();
    let g = estimate_g(&m, &w.law(), |y| y, 0.0, 1.0, &SimConfig::new(50_000, 200, 5)).unwrap();
    assert!((g.mean - w.a(0.0)).abs() <= 3.0 * g.std_err);
    let law = w.law();
    let reps = check_equilibrium(&m, &law, &perturbations(&law), &p.wealth_reward(), &[(0.0, 1.0)], &H, &SimConfig::new(40_000, 200, 42), 3.0)
        .unwrap();
    for r in &reps {
        assert_ne!(r.verdict, Verdict::Fail, "{r:?}");
    }
}
