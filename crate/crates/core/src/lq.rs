//! Time-inconsistent linear–quadratic regulator: minimize
//! `E[½∫_t^T u² ds] + (γ/2)E[(X_T − x)²]` over `dX = (aX + bu)dt + σdW`,
//! where the target `x` is the current state and therefore moves with the
//! controller.
//!
//! The equilibrium cost has the quadratic form
//! `f(t,x,y) = A x² + B y² + C xy + D x + F y + H` with `V(t,x) = f(t,x,x)`.

use crate::error::{domain, Result};
use crate::ode::{integrate_terminal, OdeSolution, OdeSystem};
use crate::reward::{estimate_j, JEstimate, RewardSpec, Sense};
use crate::sde::{ControlModel, FeedbackLaw, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
}

/// Bound on the control used when simulating; wide enough that the
/// equilibrium law stays interior for the parameter ranges we test.
pub const CONTROL_BOUND: f64 = 50.0;

impl LqParams {
    pub fn new(a: f64, b: f64, sigma: f64, gamma: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            sigma,
            gamma,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.a, self.b, self.sigma, self.gamma, self.horizon].iter().all(|v| v.is_finite()) {
            return domain("regulator parameters must be finite");
        }
        if !(self.horizon > 0.0) {
            return domain(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.gamma > 0.0) {
            return domain(format!("terminal weight must be positive, got {}", self.gamma));
        }
        if self.b == 0.0 {
            return domain("control gain b must be non-zero");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ControlModel> {
        let (a, b, sigma) = (self.a, self.b, self.sigma);
        ControlModel::scalar(
            move |_, x, u| a * x + b * u,
            move |_, _, _| sigma,
            -CONTROL_BOUND,
            CONTROL_BOUND,
            self.horizon,
        )
    }

    pub fn reward(&self) -> RewardSpec {
        let g = self.gamma;
        RewardSpec::new(Sense::Minimize)
            .running(|_, _, _, _, u| 0.5 * u[0] * u[0])
            .terminal(move |_, x, y| 0.5 * g * (y - x) * (y - x))
    }
}

/// Coefficient columns in the ODE solution.
pub const COEFFS: [&str; 6] = ["A", "B", "C", "D", "F", "H"];

#[derive(Debug, Clone)]
pub struct LqSolution {
    pub params: LqParams,
    /// Columns in the order of [`COEFFS`].
    pub ode: OdeSolution,
}

pub fn solve_lq(params: &LqParams, steps: usize) -> Result<LqSolution> {
    params.validate()?;
    let p = *params;
    let b2 = p.b * p.b;
    let s2 = p.sigma * p.sigma;
    let system = OdeSystem::new(6, move |_, y, out| {
        let (a, c, d) = (y[0], y[2], y[3]);
        let k = 2.0 * a + c;
        out[0] = -2.0 * p.a * a + 2.0 * b2 * a * k - 0.5 * b2 * k * k;
        out[1] = 0.0;
        out[2] = -p.a * c + b2 * c * k;
        out[3] = -p.a * d + 2.0 * b2 * a * d;
        out[4] = b2 * c * d;
        out[5] = 0.5 * b2 * d * d - s2 * a;
    });
    let g = p.gamma;
    let terminal = [0.5 * g, 0.5 * g, -g, 0.0, 0.0, 0.0];
    let ode = integrate_terminal(&system, &terminal, 0.0, p.horizon, steps)?;
    Ok(LqSolution { params: p, ode })
}

impl LqSolution {
    pub fn coeff(&self, t: f64, j: usize) -> f64 {
        self.ode.component(t, j)
    }

    pub fn f(&self, t: f64, x: f64, y: f64) -> f64 {
        let c = self.ode.eval(t);
        c[0] * x * x + c[1] * y * y + c[2] * x * y + c[3] * x + c[4] * y + c[5]
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.f(t, x, x)
    }

    pub fn u_hat(&self, t: f64, x: f64) -> f64 {
        let c = self.ode.eval(t);
        -self.params.b * ((2.0 * c[0] + c[2]) * x + c[3])
    }

    pub fn law(&self) -> FeedbackLaw {
        let s = self.clone();
        FeedbackLaw::scalar(move |t, x| s.u_hat(t, x))
    }
}

/// Monte Carlo cost under the equilibrium law versus the model value.
#[derive(Debug, Clone, Copy)]
pub struct LqValueRow {
    pub t: f64,
    pub x: f64,
    pub estimate: JEstimate,
    pub model_value: f64,
    /// `(estimate − model) / SE`; zero when both the error and SE vanish.
    pub z: f64,
    pub within_3se: bool,
    /// Raised beyond five standard errors: a sign problem in the model
    /// equations would show up here.
    pub flagged: bool,
}

pub fn lq_value_check(params: &LqParams, solution: &LqSolution, points: &[(f64, f64)], config: &SimConfig) -> Result<Vec<LqValueRow>> {
    let model = params.model()?;
    let spec = params.reward();
    let law = solution.law();
    points
        .iter()
        .map(|&(t, x)| {
            let est = estimate_j(&model, &law, &spec, t, x, config)?;
            let v = solution.value(t, x);
            let err = est.mean - v;
            let z = if est.std_err > 0.0 { err / est.std_err } else if err == 0.0 { 0.0 } else { f64::INFINITY * err.signum() };
            Ok(LqValueRow {
                t,
                x,
                estimate: est,
                model_value: v,
                z,
                within_3se: z.abs() <= 3.0,
                flagged: z.abs() > 5.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> LqParams {
        LqParams::new(0.0, 1.0, 0.1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn structural_zeros_and_constants() {
        for p in [desk(), LqParams::new(-0.3, 2.0, 0.5, 3.0, 2.0).unwrap()] {
            let s = solve_lq(&p, 400).unwrap();
            for row in s.ode.values.rows() {
                assert_eq!(row[1], 0.5 * p.gamma);
                assert!(row[3].abs() <= 1e-10);
                assert!(row[4].abs() <= 1e-10);
                assert!(row[0] >= 0.0);
            }
            assert!(s.u_hat(p.horizon, 3.0).abs() <= 1e-10);
            assert_eq!(s.value(p.horizon, 2.0), 0.0);
        }
    }

    #[test]
    fn noiseless_cost_at_origin_is_zero() {
        let p = LqParams::new(0.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let s = solve_lq(&p, 100).unwrap();
        assert_eq!(s.value(0.0, 0.0), 0.0);
    }

    #[test]
    fn step_doubling_agreement() {
        let a = solve_lq(&desk(), 4000).unwrap();
        let b = solve_lq(&desk(), 8000).unwrap();
        for j in 0..6 {
            assert!((a.ode.values[[0, j]] - b.ode.values[[0, j]]).abs() <= 1e-8);
        }
    }

    #[test]
    fn rejects_zero_gain() {
        assert!(LqParams::new(0.0, 0.0, 0.1, 1.0, 1.0).is_err());
    }
}
