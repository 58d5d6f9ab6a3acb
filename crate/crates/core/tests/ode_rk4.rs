use proptest::prelude::*;
use tic_core::ode::{integrate_initial, integrate_terminal, OdeSystem};
use tic_core::stats::slope;

#[test]
fn fourth_order_on_decay() {
    let sys = OdeSystem::new(1, |_, y, out| out[0] = -y[0]);
    let steps = [5usize, 10, 20, 40];
    let lx: Vec<f64> = steps.iter().map(|n| (1.0 / *n as f64).ln()).collect();
    let ly: Vec<f64> = steps
        .iter()
        .map(|&n| {
            let s = integrate_initial(&sys, &[1.0], 0.0, 1.0, n).unwrap();
            (s.component(1.0, 0) - (-1.0f64).exp()).abs().ln()
        })
        .collect();
    let p = slope(&lx, &ly);
    assert!(p >= 3.8, "observed order {p}");
}

#[test]
fn backward_then_forward_returns_to_start() {
    let sys = OdeSystem::new(2, |t, y, out| {
        out[0] = y[1] * t.cos();
        out[1] = -y[0] + 0.1 * y[1] * y[1];
    });
    let back = integrate_terminal(&sys, &[0.7, -0.2], 0.0, 1.5, 600).unwrap();
    let start = back.eval(0.0);
    let fwd = integrate_initial(&sys, &start, 0.0, 1.5, 600).unwrap();
    let end = fwd.eval(1.5);
    assert!((end[0] - 0.7).abs() < 1e-10 && (end[1] + 0.2).abs() < 1e-10, "{end:?}");
}

#[test]
fn rotation_matches_matrix_exponential() {
    let sys = OdeSystem::new(2, |_, y, out| {
        out[0] = y[1];
        out[1] = -y[0];
    });
    let s = integrate_terminal(&sys, &[1.0, 0.0], 0.0, 2.0, 400).unwrap();
    for t in [0.0, 0.5, 1.3] {
        let tau = t - 2.0;
        let y = s.eval(t);
        assert!((y[0] - tau.cos()).abs() < 1e-9);
        assert!((y[1] + tau.sin()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_terminal_problems(lambda in -2.0f64..2.0, c in -5.0f64..5.0, t in 0.0f64..1.0) {
        let sys = OdeSystem::new(1, move |_, y, out| out[0] = lambda * y[0]);
        let s = integrate_terminal(&sys, &[c], 0.0, 1.0, 200).unwrap();
        let want = c * (lambda * (t - 1.0)).exp();
        prop_assert!((s.component(t, 0) - want).abs() < 1e-4 * (1.0 + want.abs()));
    }

    #[test]
    fn solution_is_exact_at_terminal_node(c in -5.0f64..5.0, steps in 1usize..50) {
        let sys = OdeSystem::new(1, |t, y, out| out[0] = y[0].sin() + t);
        let s = integrate_terminal(&sys, &[c], 0.0, 1.0, steps).unwrap();
        prop_assert_eq!(s.component(1.0, 0), c);
    }
}
