//! Mean–variance portfolio selection with wealth dynamics
//! `dX = [rX + (α − r)u]dt + σu dW`, where `u` is the amount held in the risky
//! asset. Two reward variants are covered:
//!
//! * constant risk aversion, `E[X_T] − (γ/2)Var[X_T]`, solved in closed form;
//! * risk aversion `γ/x` proportional to inverse current wealth, solved via a
//!   coupled two-dimensional ODE for the first and second moment coefficients.

use crate::error::{domain, Error, Result};
use crate::grid::{ExtendedProblem, SimplifiedProblem};
use crate::ode::{integrate_terminal, OdeSolution, OdeSystem};
use crate::reward::{RewardSpec, Sense};
use crate::sde::{ControlModel, FeedbackLaw};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvParams {
    pub alpha: f64,
    pub r: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl MvParams {
    pub fn new(alpha: f64, r: f64, sigma: f64, gamma: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            alpha,
            r,
            sigma,
            gamma,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.alpha, self.r, self.sigma, self.gamma, self.horizon].iter().all(|v| v.is_finite()) {
            return domain("mean-variance parameters must be finite");
        }
        if !(self.sigma > 0.0) {
            return domain(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.gamma > 0.0) {
            return domain(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.horizon > 0.0) {
            return domain(format!("horizon must be positive, got {}", self.horizon));
        }
        Ok(())
    }

    /// Excess return `α − r`.
    pub fn beta(&self) -> f64 {
        self.alpha - self.r
    }

    /// Sharpe-ratio term `(α − r)²/σ²`.
    fn sharpe_sq(&self) -> f64 {
        let b = self.beta();
        b * b / (self.sigma * self.sigma)
    }

    /// Wealth dynamics with the risky amount bounded to `[lo, hi]`.
    pub fn model(&self, lo: f64, hi: f64) -> Result<ControlModel> {
        let (r, beta, sigma) = (self.r, self.beta(), self.sigma);
        ControlModel::scalar(move |_, x, u| r * x + beta * u, move |_, _, u| sigma * u, lo, hi, self.horizon)
    }

    /// Reward `E[X_T] − (γ/2)Var[X_T]` written as `F(y) = y − (γ/2)y²` plus
    /// `G(m) = (γ/2)m²`.
    pub fn reward(&self) -> RewardSpec {
        let g = self.gamma;
        RewardSpec::new(Sense::Maximize)
            .terminal(move |_, _, y| y - 0.5 * g * y * y)
            .wrapper(move |_, _, m| 0.5 * g * m * m)
    }

    /// Reward with risk aversion `γ/x` at the anchor wealth `x`.
    pub fn wealth_reward(&self) -> RewardSpec {
        let g = self.gamma;
        RewardSpec::new(Sense::Maximize)
            .terminal(move |_, x, y| y - 0.5 * g / x * y * y)
            .wrapper(move |_, x, m| 0.5 * g / x * m * m)
    }

    /// Constant-risk-aversion reward in the grid solver's anchored form.
    pub fn extended_problem(&self, lo: f64, hi: f64) -> Result<ExtendedProblem> {
        let g = self.gamma;
        Ok(ExtendedProblem::new(self.model(lo, hi)?, move |_, y| y - 0.5 * g * y * y, Sense::Maximize)?
            .wrapper(move |_, m| 0.5 * g * m * m))
    }

    /// The same reward without anchor arguments, with analytic `G'' = γ`.
    pub fn simplified_problem(&self, lo: f64, hi: f64) -> Result<SimplifiedProblem> {
        let g = self.gamma;
        Ok(SimplifiedProblem::new(self.model(lo, hi)?, move |y| y - 0.5 * g * y * y, Sense::Maximize)?
            .wrapper(move |m| 0.5 * g * m * m)
            .curvature(move |_| g))
    }
}

/// Closed-form equilibrium for constant risk aversion.
#[derive(Debug, Clone, Copy)]
pub struct MvSolution {
    pub params: MvParams,
}

pub fn solve_mv(params: &MvParams) -> Result<MvSolution> {
    params.validate()?;
    Ok(MvSolution { params: *params })
}

impl MvSolution {
    fn tau(&self, t: f64) -> f64 {
        self.params.horizon - t
    }

    /// Coefficient of `x` in `V`.
    pub fn big_a(&self, t: f64) -> f64 {
        (self.params.r * self.tau(t)).exp()
    }

    /// Constant term of `V`.
    pub fn big_b(&self, t: f64) -> f64 {
        self.params.sharpe_sq() / (2.0 * self.params.gamma) * self.tau(t)
    }

    /// Coefficient of `x` in `g`.
    pub fn a(&self, t: f64) -> f64 {
        self.big_a(t)
    }

    /// Constant term of `g`.
    pub fn b(&self, t: f64) -> f64 {
        self.params.sharpe_sq() / self.params.gamma * self.tau(t)
    }

    pub fn u_hat(&self, t: f64, _x: f64) -> f64 {
        let p = &self.params;
        p.beta() / (p.gamma * p.sigma * p.sigma) * (-p.r * self.tau(t)).exp()
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.big_a(t) * x + self.big_b(t)
    }

    pub fn g(&self, t: f64, x: f64) -> f64 {
        self.a(t) * x + self.b(t)
    }

    pub fn law(&self) -> FeedbackLaw {
        let s = *self;
        FeedbackLaw::scalar(move |t, x| s.u_hat(t, x))
    }
}

/// ODE-based equilibrium for risk aversion `γ/x`.
#[derive(Debug, Clone)]
pub struct MvWealthSolution {
    pub params: MvParams,
    /// Columns `a`, `b`: `E_{t,x}[X_T] = a(t)x` and `E_{t,x}[X_T²] = b(t)x²`.
    pub ode: OdeSolution,
}

impl MvWealthSolution {
    pub fn a(&self, t: f64) -> f64 {
        self.ode.component(t, 0)
    }

    pub fn b(&self, t: f64) -> f64 {
        self.ode.component(t, 1)
    }

    /// Risky amount per unit of wealth, `û(t,x)/x`.
    pub fn weight(&self, t: f64) -> f64 {
        let p = &self.params;
        let (a, b) = (self.a(t), self.b(t));
        p.beta() / (p.gamma * p.sigma * p.sigma) * (a + p.gamma * (a * a - b)) / b
    }

    pub fn u_hat(&self, t: f64, x: f64) -> f64 {
        self.weight(t) * x
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        let (a, b) = (self.a(t), self.b(t));
        (a + 0.5 * self.params.gamma * (a * a - b)) * x
    }

    pub fn law(&self) -> FeedbackLaw {
        let s = self.clone();
        FeedbackLaw::scalar(move |t, x| s.u_hat(t, x))
    }
}

pub fn solve_mv_wealth(params: &MvParams, steps: usize) -> Result<MvWealthSolution> {
    params.validate()?;
    let p = *params;
    let k = p.beta() * p.beta() / (p.gamma * p.sigma * p.sigma);
    let system = OdeSystem::new(2, move |_, y, out| {
        let (a, b) = (y[0], y[1]);
        let bracket = a + p.gamma * (a * a - b);
        let drift = p.r + k / b * bracket;
        out[0] = -drift * a;
        out[1] = -(2.0 * drift + k / (p.gamma * b * b) * bracket * bracket) * b;
    });
    let ode = integrate_terminal(&system, &[1.0, 1.0], 0.0, p.horizon, steps)?;
    for (i, row) in ode.values.rows().into_iter().enumerate() {
        if !(row[1] > 0.0) {
            return Err(Error::Singularity {
                t: ode.times[i],
                what: format!("second-moment coefficient b = {} is not positive", row[1]),
            });
        }
    }
    Ok(MvWealthSolution { params: p, ode })
}

/// Running reward `K(s, u) = −(γσ²/2)e^{2r(T−s)}u²` of the time-consistent
/// problem `max E[X_T + ∫K ds]` whose optimum coincides with the equilibrium.
pub fn equivalent_standard_objective(params: &MvParams) -> impl Fn(f64, f64) -> f64 + Send + Sync + Clone {
    let p = *params;
    move |s, u| -0.5 * p.gamma * p.sigma * p.sigma * (2.0 * p.r * (p.horizon - s)).exp() * u * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn desk() -> MvParams {
        MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(MvParams::new(0.08, 0.03, 0.0, 2.0, 1.0).is_err());
        assert!(MvParams::new(0.08, 0.03, 0.2, -1.0, 1.0).is_err());
        assert!(MvParams::new(0.08, 0.03, 0.2, 2.0, 0.0).is_err());
    }

    #[test]
    fn terminal_values() {
        let s = solve_mv(&desk()).unwrap();
        assert_relative_eq!(s.u_hat(1.0, 7.0), 0.625, epsilon = 1e-15);
        assert_eq!(s.value(1.0, 3.3), 3.3);
        assert_eq!(s.g(1.0, 3.3), 3.3);
        assert_eq!(s.b(1.0), 0.0);
    }

    // Frozen from an independent evaluation of the closed forms.
    #[test]
    fn desk_values() {
        let s = solve_mv(&desk()).unwrap();
        assert_relative_eq!(s.u_hat(0.0, 1.0), 0.606_528_458_5, epsilon = 1e-9);
        assert_relative_eq!(s.value(0.0, 1.0), 1.046_079_534_0, epsilon = 1e-9);
        assert_relative_eq!(s.g(0.0, 1.0), 1.061_704_534_0, epsilon = 1e-9);
    }

    #[test]
    fn control_is_flat_in_wealth() {
        let s = solve_mv(&desk()).unwrap();
        for x in [0.1, 1.0, 4.0, 100.0] {
            assert_eq!(s.u_hat(0.3, x), s.u_hat(0.3, 1.0));
        }
    }

    #[test]
    fn wealth_variant_terminal_weight() {
        let s = solve_mv_wealth(&desk(), 200).unwrap();
        assert_relative_eq!(s.weight(1.0), 0.625, epsilon = 1e-15);
        assert_eq!(s.value(1.0, 2.0), 2.0);
    }

    #[test]
    fn wealth_variant_is_linear_in_wealth() {
        let s = solve_mv_wealth(&desk(), 400).unwrap();
        for t in [0.0, 0.37, 0.9] {
            let w = s.u_hat(t, 1.0);
            let v = s.value(t, 1.0);
            for x in [0.5, 2.0, 8.0] {
                assert_relative_eq!(s.u_hat(t, x) / x, w, max_relative = 1e-12);
                assert_relative_eq!(s.value(t, x) / x, v, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn wealth_variant_step_doubling() {
        let a = solve_mv_wealth(&desk(), 2000).unwrap();
        let b = solve_mv_wealth(&desk(), 4000).unwrap();
        assert!((a.a(0.0) - b.a(0.0)).abs() <= 1e-8);
        assert!((a.b(0.0) - b.b(0.0)).abs() <= 1e-8);
    }

    #[test]
    fn equivalent_kernel_limits() {
        let k = equivalent_standard_objective(&desk());
        assert_eq!(k(0.3, 0.0), 0.0);
        assert_relative_eq!(k(1.0, 0.5), -0.5 * 2.0 * 0.04 * 0.25, epsilon = 1e-16);
    }
}
