//! Production economy with a linear technology `dS = αS dt + σS dW` and a
//! representative agent with non-exponential discounting `β`, consuming from
//! wealth `X` over an infinite horizon. In equilibrium all wealth sits in the
//! technology, which yields closed forms for the short rate, the Girsanov
//! kernel, consumption and the stochastic discount factor (SDF).

use crate::discounting::{DiscountFn, DiscountKind};
use crate::error::{domain, Error, Result};
use crate::quad::{adaptive_simpson, simpson};
use crate::sde::{fold_paths, ControlModel, FeedbackLaw, SimConfig};
use crate::stats::mean_and_se;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility {
    Log,
    /// `c^γ/γ` with `γ < 1`, `γ ≠ 0`.
    Power { gamma: f64 },
}

#[derive(Debug, Clone)]
pub struct CirParams {
    pub alpha: f64,
    pub sigma: f64,
    pub beta_fn: DiscountFn,
    pub utility: Utility,
}

impl CirParams {
    pub fn new(alpha: f64, sigma: f64, beta_fn: DiscountFn, utility: Utility) -> Result<Self> {
        if !alpha.is_finite() {
            return domain(format!("technology drift must be finite, got {alpha}"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return domain(format!("technology volatility must be positive, got {sigma}"));
        }
        if let Utility::Power { gamma } = utility {
            if !(gamma < 1.0) || gamma == 0.0 || !gamma.is_finite() {
                return domain(format!("power utility needs gamma < 1 and gamma != 0, got {gamma}"));
            }
        }
        beta_fn.validate(50.0)?;
        Ok(Self {
            alpha,
            sigma,
            beta_fn,
            utility,
        })
    }
}

/// `∫_from^∞ β(s) e^{cs} ds`, in closed form where the family allows it and by
/// truncated adaptive quadrature with an explicit tail bound otherwise.
pub fn discounted_integral(beta: &DiscountFn, from: f64, c: f64) -> Result<f64> {
    if let Some(v) = beta.weighted_tail(from, c) {
        return Ok(v);
    }
    match beta.kind() {
        DiscountKind::Hyperbolic { .. } if c < 0.0 => {
            // Tail bound: ∫_L^∞ β(s)e^{cs} ds ≤ β(L)e^{cL}/|c| for decreasing β.
            let bound = |l: f64| beta.phi(l) * (c * l).exp() / c.abs();
            let mut upper = from + 1.0;
            while bound(upper) > 1e-14 {
                upper = from + 2.0 * (upper - from);
            }
            let f = |s: f64| beta.phi(s) * (c * s).exp();
            let mut total = 0.0;
            let mut lo = from;
            let mut width = 1.0;
            while lo < upper {
                let hi = (lo + width).min(upper);
                total += adaptive_simpson(&f, lo, hi, 1e-14, 40);
                lo = hi;
                width *= 2.0;
            }
            Ok(total)
        }
        DiscountKind::Custom => domain("custom discount functions have no tail bound and cannot be used on an infinite horizon"),
        _ => domain(format!("discount integral with exponential weight {c} diverges")),
    }
}

#[derive(Debug, Clone)]
pub struct CirLogSolution {
    pub alpha: f64,
    pub sigma: f64,
    pub r: f64,
    pub phi_kernel: f64,
    pub a0: f64,
    pub beta_fn: DiscountFn,
}

impl CirLogSolution {
    /// `a(t) = ∫_t^∞ β(s) ds`.
    pub fn a(&self, t: f64) -> f64 {
        discounted_integral(&self.beta_fn, t, 0.0).unwrap_or(f64::NAN)
    }

    pub fn c_hat(&self, _t: f64, x: f64) -> f64 {
        x / self.a0
    }

    pub fn sdf(&self, t: f64, x: f64) -> f64 {
        (-t / self.a0).exp() / x
    }
}

pub fn solve_cir_log(params: &CirParams) -> Result<CirLogSolution> {
    if params.utility != Utility::Log {
        return domain("log solver called with non-log utility");
    }
    let a0 = discounted_integral(&params.beta_fn, 0.0, 0.0)?;
    if !(a0 > 0.0 && a0.is_finite()) {
        return domain(format!("discount integral must be positive and finite, got {a0}"));
    }
    Ok(CirLogSolution {
        alpha: params.alpha,
        sigma: params.sigma,
        r: params.alpha - params.sigma * params.sigma,
        phi_kernel: -params.sigma,
        a0,
        beta_fn: params.beta_fn.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct CirPowerSolution {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub r: f64,
    pub phi_kernel: f64,
    pub a0: f64,
    /// Consumption rate `D = a0^{−1/(1−γ)}`.
    pub d: f64,
    /// `A = α − D − σ²(1−γ)/2`.
    pub big_a: f64,
    pub beta_fn: DiscountFn,
}

/// `D = a0^{−1/(1−γ)}` from the first-order condition for consumption.
pub fn consumption_rate_from_a0(a0: f64, gamma: f64) -> f64 {
    a0.powf(-1.0 / (1.0 - gamma))
}

impl CirPowerSolution {
    /// `a(t) = a0 e^{−γAt} − D^γ ∫_0^t e^{−γA(t−s)} β(s) ds`, the solution of
    /// `ȧ + γA a + D^γ β = 0`.
    pub fn a(&self, t: f64) -> f64 {
        let ga = self.gamma * self.big_a;
        let conv = simpson(|s| (-ga * (t - s)).exp() * self.beta_fn.phi(s), 0.0, t, 2000);
        self.a0 * (-ga * t).exp() - self.d.powf(self.gamma) * conv
    }

    /// `ȧ(0)/a(0)`, the deterministic growth rate in the SDF.
    pub fn growth(&self) -> f64 {
        let a_dot0 = -self.gamma * self.big_a * self.a0 - self.d.powf(self.gamma) * self.beta_fn.phi(0.0);
        a_dot0 / self.a0
    }

    pub fn c_hat(&self, _t: f64, x: f64) -> f64 {
        self.d * x
    }

    pub fn sdf(&self, t: f64, x: f64) -> f64 {
        x.powf(self.gamma - 1.0) * (self.growth() * t).exp()
    }
}

/// Solves the power-utility economy. The level `a0` is fixed by requiring
/// `a(t) → 0`, which amounts to `D·∫_0^∞ β(s)e^{γA(D)s} ds = 1`.
pub fn solve_cir_power(params: &CirParams) -> Result<CirPowerSolution> {
    let gamma = match params.utility {
        Utility::Power { gamma } => gamma,
        Utility::Log => return domain("power solver called with log utility"),
    };
    let (alpha, sigma) = (params.alpha, params.sigma);
    let base = alpha - 0.5 * sigma * sigma * (1.0 - gamma);
    let excess = |d: f64| -> Option<f64> {
        discounted_integral(&params.beta_fn, 0.0, gamma * (base - d))
            .ok()
            .filter(|v| v.is_finite())
            .map(|i| d * i - 1.0)
    };
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    let mut d = 1e-8;
    while d < 1e4 {
        if let Some(h) = excess(d) {
            if let Some((dp, hp)) = prev {
                if hp.signum() != h.signum() || h == 0.0 {
                    bracket = Some((dp, d));
                    break;
                }
            }
            prev = Some((d, h));
        } else {
            prev = None;
        }
        d *= 1.05;
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        Error::Domain("no market equilibrium: transversality cannot be met for any positive consumption rate".into())
    })?;
    let h_lo = excess(lo).unwrap();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match excess(mid) {
            Some(h) if h.signum() == h_lo.signum() && h != 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => return Err(Error::NonFinite(format!("discount integral at consumption rate {mid}"))),
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let d = 0.5 * (lo + hi);
    let a0 = d.powf(gamma - 1.0);
    Ok(CirPowerSolution {
        alpha,
        sigma,
        gamma,
        r: alpha - sigma * sigma * (1.0 - gamma),
        phi_kernel: -sigma * (1.0 - gamma),
        a0,
        d,
        big_a: alpha - d - 0.5 * sigma * sigma * (1.0 - gamma),
        beta_fn: params.beta_fn.clone(),
    })
}

/// A solved economy of either kind.
#[derive(Debug, Clone)]
pub enum CirSolution {
    Log(CirLogSolution),
    Power(CirPowerSolution),
}

impl CirSolution {
    pub fn solve(params: &CirParams) -> Result<Self> {
        match params.utility {
            Utility::Log => solve_cir_log(params).map(Self::Log),
            Utility::Power { .. } => solve_cir_power(params).map(Self::Power),
        }
    }

    pub fn r(&self) -> f64 {
        match self {
            Self::Log(s) => s.r,
            Self::Power(s) => s.r,
        }
    }

    pub fn phi_kernel(&self) -> f64 {
        match self {
            Self::Log(s) => s.phi_kernel,
            Self::Power(s) => s.phi_kernel,
        }
    }

    pub fn a0(&self) -> f64 {
        match self {
            Self::Log(s) => s.a0,
            Self::Power(s) => s.a0,
        }
    }

    /// Consumption per unit of wealth.
    pub fn consumption_rate(&self) -> f64 {
        match self {
            Self::Log(s) => 1.0 / s.a0,
            Self::Power(s) => s.d,
        }
    }

    pub fn sdf(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Log(s) => s.sdf(t, x),
            Self::Power(s) => s.sdf(t, x),
        }
    }

    fn alpha_sigma(&self) -> (f64, f64) {
        match self {
            Self::Log(s) => (s.alpha, s.sigma),
            Self::Power(s) => (s.alpha, s.sigma),
        }
    }
}

/// Martingale statistics at one checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct SdfCheckpoint {
    pub t: f64,
    pub mb_mean: f64,
    pub mb_se: f64,
    pub ms_mean: f64,
    pub ms_se: f64,
    /// Largest pathwise deviation of `M_tS_t` from `M_0S_0`.
    pub ms_max_dev: f64,
    /// Allowed pathwise deviation of `M_tS_t` in the log case: the first-order
    /// Euler error envelope `Δ·M_0S_0·(1 + ct(|σ² − α| + c/2) + 6cσ√t)`.
    pub ms_tol: f64,
    /// Largest pathwise deviation of `M_tX_t + ∫_0^t M_s ĉ_s ds` from `M_0X_0`.
    pub gain_max_dev: f64,
}

#[derive(Debug, Clone)]
pub struct SdfReport {
    pub log_case: bool,
    pub m0b0: f64,
    pub m0s0: f64,
    pub step: f64,
    pub checkpoints: Vec<SdfCheckpoint>,
    /// Deflated bank account has constant mean within 3 SE at every checkpoint.
    pub bank_ok: bool,
    /// Log case: `M_tS_t` pathwise constant within the Euler error envelope.
    /// Power case: constant mean within 3 SE.
    pub technology_ok: bool,
    /// Log case: pathwise deflated gain within `gain_tol`. Always true for power.
    pub gain_ok: bool,
    pub gain_tol: f64,
}

impl SdfReport {
    pub fn passed(&self) -> bool {
        self.bank_ok && self.technology_ok && self.gain_ok
    }
}

struct WealthAcc {
    m: Vec<f64>,
    gain: Vec<f64>,
    prev: Option<(f64, f64)>,
    integral: f64,
}

/// Simulates the equilibrium wealth `dX = (αX − ĉ)dt + σX dW` and the
/// technology `dS = αS dt + σS dW` on the same Brownian draws (same seed and
/// per-path streams) up to `horizon`, and checks the deflated price processes
/// at `n_checkpoints` equally spaced times.
pub fn certify_sdf(solution: &CirSolution, horizon: f64, n_checkpoints: usize, config: &SimConfig) -> Result<SdfReport> {
    if n_checkpoints == 0 || config.n_steps % n_checkpoints != 0 {
        return domain(format!(
            "checkpoint count {n_checkpoints} must divide the step count {}",
            config.n_steps
        ));
    }
    let (alpha, sigma) = solution.alpha_sigma();
    let rate = solution.consumption_rate();
    let wealth = ControlModel::scalar(move |_, x, c| alpha * x - c, move |_, x, _| sigma * x, 0.0, f64::MAX, horizon)?
        .with_positive_state();
    let technology = ControlModel::scalar(move |_, s, _| alpha * s, move |_, s, _| sigma * s, 0.0, 0.0, horizon)?;
    let consume = FeedbackLaw::scalar(move |_, x| rate * x);
    let idle = FeedbackLaw::scalar(|_, _| 0.0);
    let every = config.n_steps / n_checkpoints;
    let (x0, s0) = (1.0, 1.0);

    let xs = fold_paths(
        &wealth,
        &consume,
        0.0,
        x0,
        config,
        || WealthAcc {
            m: Vec::with_capacity(n_checkpoints + 1),
            gain: Vec::with_capacity(n_checkpoints + 1),
            prev: None,
            integral: 0.0,
        },
        |acc, k, t, x, c| {
            let m = solution.sdf(t, x);
            let flow = m * c[0];
            if let Some((tp, fp)) = acc.prev {
                acc.integral += 0.5 * (t - tp) * (fp + flow);
            }
            acc.prev = Some((t, flow));
            if k % every == 0 {
                acc.m.push(m);
                acc.gain.push(m * x + acc.integral);
            }
        },
    )?;
    let ss = fold_paths(
        &technology,
        &idle,
        0.0,
        s0,
        config,
        || Vec::with_capacity(n_checkpoints + 1),
        |acc: &mut Vec<f64>, k, _, s, _| {
            if k % every == 0 {
                acc.push(s);
            }
        },
    )?;

    let r = solution.r();
    let m0 = solution.sdf(0.0, x0);
    let (m0b0, m0s0) = (m0, m0 * s0);
    let dt = horizon / config.n_steps as f64;
    let gain_tol = 5e-3;
    let log_case = matches!(solution, CirSolution::Log(_));
    let mut checkpoints = Vec::with_capacity(n_checkpoints + 1);
    let mut bank_ok = true;
    let mut technology_ok = true;
    let mut gain_ok = true;
    for j in 0..=n_checkpoints {
        let t = if j == n_checkpoints { horizon } else { (j * every) as f64 * dt };
        let growth = (r * t).exp();
        let mb: Vec<f64> = xs.iter().map(|(w, _)| w.m[j] * growth).collect();
        let ms: Vec<f64> = xs.iter().zip(&ss).map(|((w, _), (s, _))| w.m[j] * s[j]).collect();
        let gain_dev = xs.iter().map(|(w, _)| (w.gain[j] - m0 * x0).abs()).fold(0.0, f64::max);
        let ms_dev = ms.iter().map(|v| (v - m0s0).abs()).fold(0.0, f64::max);
        let (mb_mean, mb_se) = mean_and_se(&mb);
        let (ms_mean, ms_se) = mean_and_se(&ms);
        bank_ok &= (mb_mean - m0b0).abs() <= 3.0 * mb_se || (mb_mean - m0b0).abs() <= 1e-12;
        // Per step the Euler ratio S/X picks up a drift error c·Δ²(σ² − α + c/2)
        // and a martingale error −cσΔ·ΔW.
        let ms_tol = dt * m0s0.abs() * (1.0 + rate * t * ((sigma * sigma - alpha).abs() + 0.5 * rate) + 6.0 * rate * sigma * t.sqrt());
        if log_case {
            technology_ok &= ms_dev <= ms_tol;
            gain_ok &= gain_dev <= gain_tol;
        } else {
            technology_ok &= (ms_mean - m0s0).abs() <= 3.0 * ms_se || (ms_mean - m0s0).abs() <= 1e-12;
        }
        checkpoints.push(SdfCheckpoint {
            t,
            mb_mean,
            mb_se,
            ms_mean,
            ms_se,
            ms_max_dev: ms_dev,
            ms_tol,
            gain_max_dev: gain_dev,
        });
    }
    Ok(SdfReport {
        log_case,
        m0b0,
        m0s0,
        step: dt,
        checkpoints,
        bank_ok,
        technology_ok,
        gain_ok,
        gain_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn log_params(delta: f64) -> CirParams {
        CirParams::new(0.08, 0.2, DiscountFn::exponential(delta).unwrap(), Utility::Log).unwrap()
    }

    #[test]
    fn log_closed_forms() {
        let s = solve_cir_log(&log_params(0.1)).unwrap();
        assert_relative_eq!(s.a0, 10.0, epsilon = 1e-12);
        assert_eq!(s.r, 0.08 - 0.2 * 0.2);
        assert_eq!(s.phi_kernel, -0.2);
        assert_relative_eq!(s.c_hat(0.0, 3.0), 0.3, epsilon = 1e-12);
        assert_relative_eq!(s.sdf(2.0, 4.0), 0.25 * (-0.2f64).exp(), epsilon = 1e-14);
        // no-arbitrage link between rate and kernel
        assert_eq!(s.r, s.alpha + s.phi_kernel * s.sigma);
    }

    #[test]
    fn rate_and_kernel_ignore_discounting() {
        let a = solve_cir_log(&log_params(0.1)).unwrap();
        let b = solve_cir_log(&log_params(0.7)).unwrap();
        assert_eq!(a.r, b.r);
        assert_eq!(a.phi_kernel, b.phi_kernel);
    }

    #[test]
    fn hyperbolic_tail_integrals() {
        let h = DiscountFn::hyperbolic_power(1.0, 2.0).unwrap();
        // ∫_t^∞ (1+s)^{-2} ds = 1/(1+t)
        assert_relative_eq!(discounted_integral(&h, 0.5, 0.0).unwrap(), 1.0 / 1.5, epsilon = 1e-14);
        // Numerical branch against a fine Simpson sum on a long interval.
        let v = discounted_integral(&h, 0.0, -0.3).unwrap();
        let want = simpson(|s| (1.0 + s).powi(-2) * (-0.3 * s).exp(), 0.0, 200.0, 400_000);
        assert_relative_eq!(v, want, epsilon = 1e-10);
    }

    #[test]
    fn divergent_integrals_are_rejected() {
        let h = DiscountFn::hyperbolic(1.0).unwrap();
        assert!(discounted_integral(&h, 0.0, 0.0).is_err());
        let e = DiscountFn::exponential(0.1).unwrap();
        assert!(discounted_integral(&e, 0.0, 0.2).is_err());
    }

    #[test]
    fn log_a_is_decreasing_and_positive() {
        let p = CirParams::new(0.08, 0.2, DiscountFn::hyperbolic_power(0.5, 2.5).unwrap(), Utility::Log).unwrap();
        let s = solve_cir_log(&p).unwrap();
        let mut prev = s.a0;
        for i in 1..20 {
            let a = s.a(i as f64 * 0.5);
            assert!(a > 0.0 && a < prev);
            prev = a;
        }
    }

    #[test]
    fn consumption_rate_from_level() {
        assert_relative_eq!(consumption_rate_from_a0(4.0, 0.5), 0.0625, epsilon = 1e-15);
    }

    #[test]
    fn power_rate_and_kernel() {
        let p = CirParams::new(0.1, 0.2, DiscountFn::exponential(0.1).unwrap(), Utility::Power { gamma: 0.5 }).unwrap();
        let s = solve_cir_power(&p).unwrap();
        assert_relative_eq!(s.r, 0.08, epsilon = 1e-15);
        assert_relative_eq!(s.phi_kernel, -0.1, epsilon = 1e-15);
        // Exponential discounting gives the classical consumption rate.
        let want = (0.1 - 0.5 * (0.1 - 0.5 * 0.04 * 0.5)) / 0.5;
        assert_relative_eq!(s.d, want, epsilon = 1e-12);
        assert_relative_eq!(consumption_rate_from_a0(s.a0, 0.5), s.d, epsilon = 1e-12);
        assert_relative_eq!(s.a(0.0), s.a0, epsilon = 1e-12);
        // a decays toward zero
        assert!(s.a(50.0) < 0.1 * s.a0);
    }

    #[test]
    fn power_rejects_bad_gamma() {
        let e = DiscountFn::exponential(0.1).unwrap();
        assert!(CirParams::new(0.1, 0.2, e.clone(), Utility::Power { gamma: 1.0 }).is_err());
        assert!(CirParams::new(0.1, 0.2, e, Utility::Power { gamma: 0.0 }).is_err());
    }

    #[test]
    fn power_without_equilibrium_is_reported() {
        // Strong growth with little impatience and γ close to 1: consumption
        // cannot balance the budget.
        let p = CirParams::new(3.0, 0.1, DiscountFn::exponential(0.01).unwrap(), Utility::Power { gamma: 0.9 }).unwrap();
        assert!(matches!(solve_cir_power(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn log_certification_small() {
        let s = CirSolution::solve(&log_params(0.1)).unwrap();
        let rep = certify_sdf(&s, 1.0, 10, &SimConfig::new(2000, 200, 42)).unwrap();
        assert!(rep.gain_ok && rep.technology_ok, "{rep:?}");
        assert!(rep.checkpoints.iter().all(|c| c.gain_max_dev < 1e-8));
    }
}
