use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tic_core::sde::{simulate_paths, simulate_with_increments, ControlModel, FeedbackLaw, SimConfig};
use tic_core::stats::{mean_and_se, slope};

fn gbm(mu: f64, sigma: f64) -> ControlModel {
    ControlModel::scalar(move |_, x, _| mu * x, move |_, x, _| sigma * x, 0.0, 1.0, 1.0).unwrap()
}

#[test]
fn gbm_mean_matches_euler_growth_factor() {
    // The Euler scheme for linear drift has mean exactly (1 + μΔ)^n.
    let (mu, n) = (0.3, 50);
    let batch = simulate_paths(&gbm(mu, 0.4), &FeedbackLaw::constant([0.0, 0.0]), 0.0, 1.0, &SimConfig::new(100_000, n, 7)).unwrap();
    let last: Vec<f64> = batch.states.column(n).to_vec();
    let (m, se) = mean_and_se(&last);
    let want = (1.0 + mu / n as f64).powi(n as i32);
    assert!((m - want).abs() < 3.5 * se, "mean {m} vs {want}, se {se}");
}

#[test]
fn strong_order_is_one_half() {
    let (mu, sigma) = (0.05, 0.8);
    let model = gbm(mu, sigma);
    let law = FeedbackLaw::constant([0.0, 0.0]);
    let fine = 1024;
    let levels = [8usize, 16, 32, 64, 128];
    let mut errs = vec![0.0; levels.len()];
    let paths = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..paths {
        let dw: Vec<f64> = (0..fine)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (1.0 / fine as f64).sqrt()
            })
            .collect();
        let w: f64 = dw.iter().sum();
        let exact = ((mu - 0.5 * sigma * sigma) + sigma * w).exp();
        for (k, &n) in levels.iter().enumerate() {
            let m = fine / n;
            let coarse: Vec<f64> = dw.chunks(m).map(|c| c.iter().sum()).collect();
            let xs = simulate_with_increments(&model, &law, 0.0, 1.0, &coarse).unwrap();
            errs[k] += (xs[n] - exact).abs() / paths as f64;
        }
    }
    let lx: Vec<f64> = levels.iter().map(|n| (1.0 / *n as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let p = slope(&lx, &ly);
    assert!((0.35..=0.65).contains(&p), "observed strong order {p}");
}

fn bounded_model() -> ControlModel {
    ControlModel::scalar(|_, x, u| -x + u, |_, _, u| 0.3 + 0.1 * u.abs(), -1.0, 2.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prefix_paths_do_not_depend_on_batch_size(seed in 0u64..1000, n in 1usize..20, extra in 1usize..20) {
        let law = FeedbackLaw::scalar(|t, x| x.sin() + t);
        let small = simulate_paths(&bounded_model(), &law, 0.0, 0.5, &SimConfig::new(n, 16, seed)).unwrap();
        let big = simulate_paths(&bounded_model(), &law, 0.0, 0.5, &SimConfig::new(n + extra, 16, seed)).unwrap();
        for p in 0..n {
            prop_assert_eq!(small.states.row(p), big.states.row(p));
        }
    }

    #[test]
    fn recorded_controls_respect_bounds(seed in 0u64..1000, gain in -50.0f64..50.0) {
        let law = FeedbackLaw::scalar(move |_, x| gain * x);
        let b = simulate_paths(&bounded_model(), &law, 0.0, 1.0, &SimConfig::new(8, 20, seed)).unwrap();
        prop_assert!(b.controls.iter().all(|u| (-1.0..=2.0).contains(u)));
    }

    #[test]
    fn reruns_are_identical(seed in 0u64..1000) {
        let law = FeedbackLaw::scalar(|_, x| 0.5 * x);
        let cfg = SimConfig::new(6, 12, seed).antithetic(true);
        let a = simulate_paths(&bounded_model(), &law, 0.1, 0.2, &cfg).unwrap();
        let b = simulate_paths(&bounded_model(), &law, 0.1, 0.2, &cfg).unwrap();
        prop_assert_eq!(a.states, b.states);
    }
}
