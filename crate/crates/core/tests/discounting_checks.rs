use tic_core::discounting::{hjb_residual_log, solve_log_consumption, DiscountFn};
use tic_core::equilibrium::{check_equilibrium, Perturbation, Verdict};
use tic_core::reward::estimate_j;
use tic_core::sde::SimConfig;

// Independent oracle: d(t) = ∫_t^T φ(s−t)(B(s) − B(t) − ln a(s))ds + φ(T−t)(B(T) − B(t)),
// the expected discounted log-utility of the deterministic mean log-wealth path,
// integrated with 30-digit adaptive quadrature for φ(s) = 1/(1+s).
const HYPERBOLIC_D: [(f64, f64); 4] = [
    (0.0, -0.74987646084637),
    (0.25, -0.578398911894449),
    (0.5, -0.401122862428781),
    (0.9, -0.0897430841918339),
];

fn hyperbolic() -> tic_core::discounting::LogConsumptionSolution {
    solve_log_consumption(0.08, 0.03, 0.2, 1.0, &DiscountFn::hyperbolic(1.0).unwrap(), 400).unwrap()
}

#[test]
fn hyperbolic_offset_matches_direct_expectation() {
    let s = hyperbolic();
    for (t, d) in HYPERBOLIC_D {
        assert!((s.d(t) - d).abs() < 1e-7, "d({t}) = {} vs {d}", s.d(t));
    }
    assert!((s.a(0.0) - (0.5 + 2f64.ln())).abs() < 1e-10);
}

#[test]
fn hyperbolic_residual_is_within_step_order() {
    let s = hyperbolic();
    let bound = 10.0 * s.ode_step();
    for t in [0.0, 0.2, 0.5, 0.8, 1.0] {
        for x in [0.5, 1.0, 3.0] {
            let r = hjb_residual_log(&s, t, x);
            assert!(r.abs() <= bound, "residual {r} at ({t},{x})");
        }
    }
}

#[test]
fn exponential_unit_rate_keeps_a_at_one() {
    let s = solve_log_consumption(0.1, 0.02, 0.3, 1.0, &DiscountFn::exponential(1.0).unwrap(), 200).unwrap();
    for i in 0..=50 {
        assert!((s.a(i as f64 / 50.0) - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn quasi_hyperbolic_residual() {
    let s = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &DiscountFn::quasi_hyperbolic(0.7, 0.5).unwrap(), 400).unwrap();
    for t in [0.1, 0.5, 0.9] {
        assert!(hjb_residual_log(&s, t, 1.0).abs() <= 10.0 * s.ode_step());
    }
}

#[test]
fn hyperbolic_value_and_spike_test() {
    let s = hyperbolic();
    let model = s.model(50.0, 50.0).unwrap();
    let est = estimate_j(&model, &s.law(), &s.reward(), 0.0, 1.0, &SimConfig::new(100_000, 200, 42)).unwrap();
    assert!((est.mean - s.value(0.0, 1.0)).abs() <= 3.0 * est.std_err, "{est:?} vs {}", s.value(0.0, 1.0));
    let law = s.law();
    let perturb = vec![
        Perturbation::new("more risk", law.offset([0.5, 0.0])),
        Perturbation::new("double consumption", law.scale([1.0, 2.0])),
        Perturbation::new("half consumption", law.scale([1.0, 0.5])),
    ];
    let reps = check_equilibrium(&model, &law, &perturb, &s.reward(), &[(0.0, 1.0)], &[0.2, 0.1, 0.05, 0.025], &SimConfig::new(40_000, 200, 42), 3.0)
        .unwrap();
    for r in &reps {
        assert_ne!(r.verdict, Verdict::Fail, "{r:?}");
    }
}
