use tic_core::cir::{certify_sdf, CirParams, CirSolution, Utility};
use tic_core::discounting::DiscountFn;
use tic_core::sde::SimConfig;

#[test]
fn log_economy_prices_are_consistent() {
    let p = CirParams::new(0.08, 0.2, DiscountFn::hyperbolic_power(1.0, 2.0).unwrap(), Utility::Log).unwrap();
    let s = CirSolution::solve(&p).unwrap();
    assert_eq!(s.r(), 0.08 - 0.2 * 0.2);
    assert_eq!(s.phi_kernel(), -0.2);
    let rep = certify_sdf(&s, 1.0, 10, &SimConfig::new(20_000, 200, 42)).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.checkpoints.iter().all(|c| c.gain_max_dev <= 5e-3));
}

#[test]
fn power_economy_deflated_bank_is_a_martingale() {
    for beta in [DiscountFn::exponential(0.05).unwrap(), DiscountFn::hyperbolic(0.5).unwrap()] {
        let p = CirParams::new(0.08, 0.2, beta, Utility::Power { gamma: 0.5 }).unwrap();
        let s = CirSolution::solve(&p).unwrap();
        let rep = certify_sdf(&s, 1.0, 4, &SimConfig::new(100_000, 200, 42)).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn log_utility_with_non_integrable_discount_is_rejected() {
    let p = CirParams::new(0.08, 0.2, DiscountFn::hyperbolic(1.0).unwrap(), Utility::Log).unwrap();
    assert!(CirSolution::solve(&p).is_err());
}

#[test]
fn log_technology_deviation_is_first_order() {
    let p = CirParams::new(0.08, 0.2, DiscountFn::hyperbolic_power(1.0, 2.0).unwrap(), Utility::Log).unwrap();
    let s = CirSolution::solve(&p).unwrap();
    let dev = |n| {
        let rep = certify_sdf(&s, 1.0, 1, &SimConfig::new(5_000, n, 42)).unwrap();
        rep.checkpoints.last().unwrap().ms_max_dev
    };
    let ratio = dev(100) / dev(200);
    assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
}
