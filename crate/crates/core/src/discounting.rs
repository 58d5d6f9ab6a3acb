//! Non-exponential discounting. Discount functions are shared with the
//! infinite-horizon production economy; the solver here handles the
//! finite-horizon log-utility investment and consumption problem
//!
//! `J = E[∫_t^T φ(s−t) ln c_s ds + φ(T−t) ln X_T]`,
//! `dX = [rX + (α − r)u − c]dt + σu dW`,
//!
//! whose equilibrium has `V(t,x) = a(t) ln x + d(t)`, `ĉ = x/a(t)` and
//! `û = ((α − r)/σ²) x`.

use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::ode::{integrate_terminal, OdeSolution, OdeSystem};
use crate::quad::{simpson, simpson_uniform};
use crate::reward::{RewardSpec, Sense};
use crate::sde::{ControlModel, FeedbackLaw};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Named discount families. The quasi-hyperbolic family has `φ(0) = 1` and
/// `φ(s) = β̃e^{−δs}` for `s > 0`, so it jumps at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscountKind {
    Exponential { delta: f64 },
    Hyperbolic { k: f64, m: f64 },
    QuasiHyperbolic { beta: f64, delta: f64 },
    Custom,
}

#[derive(Clone)]
pub struct DiscountFn {
    kind: DiscountKind,
    custom: Option<(ScalarFn, Option<ScalarFn>)>,
    fd_step: f64,
}

impl std::fmt::Debug for DiscountFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscountFn").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl DiscountFn {
    pub fn exponential(delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return domain(format!("exponential rate must be non-negative, got {delta}"));
        }
        Ok(Self::named(DiscountKind::Exponential { delta }))
    }

    /// `φ(s) = 1/(1 + ks)`.
    pub fn hyperbolic(k: f64) -> Result<Self> {
        Self::hyperbolic_power(k, 1.0)
    }

    /// `φ(s) = (1 + ks)^{−m}`. Integrable on `[0, ∞)` only for `m > 1`.
    pub fn hyperbolic_power(k: f64, m: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return domain(format!("hyperbolic rate must be non-negative, got {k}"));
        }
        if !(m > 0.0 && m.is_finite()) {
            return domain(format!("hyperbolic exponent must be positive, got {m}"));
        }
        Ok(Self::named(DiscountKind::Hyperbolic { k, m }))
    }

    pub fn quasi_hyperbolic(beta: f64, delta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return domain(format!("present-bias factor must be positive, got {beta}"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return domain(format!("exponential rate must be non-negative, got {delta}"));
        }
        Ok(Self::named(DiscountKind::QuasiHyperbolic { beta, delta }))
    }

    /// User-supplied `φ`, with an optional analytic derivative. Without one,
    /// the derivative is a central difference with step `1e-6·max(1, T)`.
    /// Custom functions have no known tail and are usable on finite horizons only.
    pub fn custom<F>(phi: F, phi_prime: Option<ScalarFn>, horizon: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: DiscountKind::Custom,
            custom: Some((Arc::new(phi), phi_prime)),
            fd_step: 1e-6 * horizon.max(1.0),
        }
    }

    fn named(kind: DiscountKind) -> Self {
        Self {
            kind,
            custom: None,
            fd_step: 1e-6,
        }
    }

    pub fn kind(&self) -> DiscountKind {
        self.kind
    }

    pub fn phi(&self, s: f64) -> f64 {
        match self.kind {
            DiscountKind::Exponential { delta } => (-delta * s).exp(),
            DiscountKind::Hyperbolic { k, m } => (1.0 + k * s).powf(-m),
            DiscountKind::QuasiHyperbolic { beta, delta } => {
                if s == 0.0 {
                    1.0
                } else {
                    beta * (-delta * s).exp()
                }
            }
            DiscountKind::Custom => (self.custom.as_ref().unwrap().0)(s),
        }
    }

    /// Derivative of the smooth part of `φ`; at `s = 0` this is the right
    /// derivative.
    pub fn phi_prime(&self, s: f64) -> f64 {
        match self.kind {
            DiscountKind::Exponential { delta } => -delta * (-delta * s).exp(),
            DiscountKind::Hyperbolic { k, m } => -m * k * (1.0 + k * s).powf(-m - 1.0),
            DiscountKind::QuasiHyperbolic { beta, delta } => -delta * beta * (-delta * s).exp(),
            DiscountKind::Custom => {
                let (phi, prime) = self.custom.as_ref().unwrap();
                if let Some(p) = prime {
                    return p(s);
                }
                let h = self.fd_step;
                if s >= h {
                    (phi(s + h) - phi(s - h)) / (2.0 * h)
                } else {
                    (-3.0 * phi(s) + 4.0 * phi(s + h) - phi(s + 2.0 * h)) / (2.0 * h)
                }
            }
        }
    }

    /// `φ(0+) − φ(0)`: the point mass carried by the distributional derivative.
    pub fn jump_at_zero(&self) -> f64 {
        match self.kind {
            DiscountKind::QuasiHyperbolic { beta, .. } => beta - 1.0,
            _ => 0.0,
        }
    }

    /// Checks `φ(0) = 1` and `φ ≥ 0` on a grid over `[0, horizon]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let p0 = self.phi(0.0);
        if (p0 - 1.0).abs() > 1e-12 {
            return domain(format!("discount function must satisfy phi(0) = 1, got {p0}"));
        }
        for i in 0..=1000 {
            let s = horizon * i as f64 / 1000.0;
            let v = self.phi(s);
            if !(v >= 0.0 && v.is_finite()) {
                return domain(format!("discount function is negative or non-finite at {s}: {v}"));
            }
        }
        Ok(())
    }

    /// `∫_L^∞ φ(s) e^{cs} ds` in closed form where the family allows it, for
    /// `c ≤ 0`. Returns `None` when no closed form is available.
    pub fn weighted_tail(&self, from: f64, c: f64) -> Option<f64> {
        match self.kind {
            DiscountKind::Exponential { delta } if delta - c > 0.0 => Some(((c - delta) * from).exp() / (delta - c)),
            DiscountKind::QuasiHyperbolic { beta, delta } if delta - c > 0.0 => {
                Some(beta * ((c - delta) * from).exp() / (delta - c))
            }
            DiscountKind::Hyperbolic { k, m } if c == 0.0 && m > 1.0 && k > 0.0 => {
                Some((1.0 + k * from).powf(1.0 - m) / (k * (m - 1.0)))
            }
            _ => None,
        }
    }
}

/// Uniform grid with node values of `a`, `B = ∫_0^t b` and the discounted
/// integral term of the `d` equation.
#[derive(Debug, Clone)]
struct FineGrid {
    step: f64,
    a: Vec<f64>,
    big_b: Vec<f64>,
    integral: Vec<f64>,
}

impl FineGrid {
    fn index(&self, t: f64) -> usize {
        let j = (t / self.step).round();
        j.max(0.0).min((self.a.len() - 1) as f64) as usize
    }

    fn interp(values: &[f64], step: f64, t: f64) -> f64 {
        let n = values.len() - 1;
        let pos = (t / step).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let w = pos - i as f64;
        if w == 0.0 {
            values[i]
        } else {
            values[i] + w * (values[i + 1] - values[i])
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogConsumptionSolution {
    pub alpha: f64,
    pub r: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub disc: DiscountFn,
    fine: FineGrid,
    /// `d` on the ODE grid.
    pub d_ode: OdeSolution,
}

/// Panels used for the closed quadrature of `a`.
pub const A_PANELS: usize = 2000;

/// `a(t) = φ(T−t) + ∫_0^{T−t} φ(s) ds`.
pub fn a_quadrature(disc: &DiscountFn, horizon: f64, t: f64) -> f64 {
    let tau = (horizon - t).max(0.0);
    disc.phi(tau) + simpson(|s| disc.phi(s), 0.0, tau, A_PANELS)
}

fn cumulative_simpson(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for j in 1..n {
        out[j] = if j == 1 {
            if n > 2 {
                h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
            } else {
                0.5 * h * (values[0] + values[1])
            }
        } else if j % 2 == 0 {
            out[j - 2] + h / 3.0 * (values[j - 2] + 4.0 * values[j - 1] + values[j])
        } else {
            out[j - 1] + h / 12.0 * (-values[j - 2] + 8.0 * values[j - 1] + 5.0 * values[j])
        };
    }
    out
}

pub fn solve_log_consumption(
    alpha: f64,
    r: f64,
    sigma: f64,
    horizon: f64,
    disc: &DiscountFn,
    steps: usize,
) -> Result<LogConsumptionSolution> {
    if !(sigma > 0.0) {
        return domain(format!("sigma must be positive, got {sigma}"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if steps == 0 {
        return domain("at least one ODE step is required");
    }
    disc.validate(horizon)?;
    let beta = alpha - r;
    let growth = r + 0.5 * beta * beta / (sigma * sigma);

    // The fine grid has twice as many intervals as the ODE grid, so every RK4
    // stage time is a node.
    let m = 2 * steps;
    let hf = horizon / m as f64;
    let node = |j: usize| if j == m { horizon } else { j as f64 * hf };
    let mut a = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let v = a_quadrature(disc, horizon, node(j));
        if !(v > 0.0) {
            return Err(Error::Singularity {
                t: node(j),
                what: format!("consumption scale a = {v} is not positive"),
            });
        }
        a.push(v);
    }
    let b: Vec<f64> = a.iter().map(|ai| growth - 1.0 / ai).collect();
    let big_b = cumulative_simpson(&b, hf);
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let dphi: Vec<f64> = (0..=m).map(|i| disc.phi_prime(i as f64 * hf)).collect();
    let mut integral = vec![0.0; m + 1];
    let mut buf = Vec::with_capacity(m + 1);
    for j in 0..m {
        buf.clear();
        buf.extend((j..=m).map(|i| dphi[i - j] * (big_b[i] - big_b[j] - log_a[i])));
        integral[j] = simpson_uniform(&buf, hf);
    }
    let fine = FineGrid {
        step: hf,
        a,
        big_b,
        integral,
    };

    let jump = disc.jump_at_zero();
    let rhs_fine = fine.clone();
    let disc_rhs = disc.clone();
    let system = OdeSystem::new(1, move |t, _, out| {
        let j = rhs_fine.index(t);
        let (aj, lj) = (rhs_fine.a[j], rhs_fine.a[j].ln());
        let tail = disc_rhs.phi_prime(horizon - t) * (rhs_fine.big_b[m] - rhs_fine.big_b[j]);
        out[0] = -(-lj + aj * r + 0.5 * aj * beta * beta / (sigma * sigma) - 1.0 + rhs_fine.integral[j] - jump * lj + tail);
    });
    let d_ode = integrate_terminal(&system, &[0.0], 0.0, horizon, steps)?;
    Ok(LogConsumptionSolution {
        alpha,
        r,
        sigma,
        horizon,
        disc: disc.clone(),
        fine,
        d_ode,
    })
}

impl LogConsumptionSolution {
    pub fn beta(&self) -> f64 {
        self.alpha - self.r
    }

    /// `a(t)` interpolated from the fine quadrature grid.
    pub fn a(&self, t: f64) -> f64 {
        FineGrid::interp(&self.fine.a, self.fine.step, t)
    }

    /// `B(t) = ∫_0^t b`, the log-growth primitive.
    pub fn big_b(&self, t: f64) -> f64 {
        FineGrid::interp(&self.fine.big_b, self.fine.step, t)
    }

    pub fn d(&self, t: f64) -> f64 {
        self.d_ode.component(t, 0)
    }

    pub fn c_hat(&self, t: f64, x: f64) -> f64 {
        x / self.a(t)
    }

    pub fn u_hat(&self, _t: f64, x: f64) -> f64 {
        self.beta() / (self.sigma * self.sigma) * x
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.a(t) * x.ln() + self.d(t)
    }

    /// Joint law `[u, c]`.
    pub fn law(&self) -> FeedbackLaw {
        let s = self.clone();
        FeedbackLaw::new(move |t, x| [s.u_hat(t, x), s.c_hat(t, x)])
    }

    /// Wealth dynamics with controls `[u, c]`, `u ∈ [−u_max, u_max]` and
    /// `c ∈ [1e-8, c_max]`. Wealth is kept positive by absorption.
    pub fn model(&self, u_max: f64, c_max: f64) -> Result<ControlModel> {
        let (r, beta, sigma) = (self.r, self.beta(), self.sigma);
        Ok(ControlModel::new(
            2,
            move |_, x, u| r * x + beta * u[0] - u[1],
            move |_, _, u| sigma * u[0],
            [-u_max, 1e-8],
            [u_max, c_max],
            self.horizon,
        )?
        .with_positive_state())
    }

    /// `H = φ(s−t) ln c`, `F = φ(T−t) ln y`.
    pub fn reward(&self) -> RewardSpec {
        let (d1, d2, horizon) = (self.disc.clone(), self.disc.clone(), self.horizon);
        RewardSpec::new(Sense::Maximize)
            .running(move |t, _, s, _, u| d1.phi(s - t) * u[1].ln())
            .terminal(move |t, _, y| d2.phi(horizon - t) * y.ln())
    }

    /// ODE step of the `d` grid.
    pub fn ode_step(&self) -> f64 {
        self.d_ode.times[1] - self.d_ode.times[0]
    }
}

fn a_dot(sol: &LogConsumptionSolution, t: f64) -> f64 {
    let e = 1e-4 * sol.horizon;
    let a = |s: f64| a_quadrature(&sol.disc, sol.horizon, s);
    if t + e <= sol.horizon && t - e >= 0.0 {
        (a(t + e) - a(t - e)) / (2.0 * e)
    } else if t + e > sol.horizon {
        (3.0 * a(t) - 4.0 * a(t - e) + a(t - 2.0 * e)) / (2.0 * e)
    } else {
        (-3.0 * a(t) + 4.0 * a(t + e) - a(t + 2.0 * e)) / (2.0 * e)
    }
}

fn d_dot(sol: &LogConsumptionSolution, t: f64) -> f64 {
    // Fourth-order stencils on the ODE grid spacing.
    let h = sol.ode_step();
    let d = |s: f64| sol.d(s);
    if t - 2.0 * h >= 0.0 && t + 2.0 * h <= sol.horizon {
        (-d(t + 2.0 * h) + 8.0 * d(t + h) - 8.0 * d(t - h) + d(t - 2.0 * h)) / (12.0 * h)
    } else {
        let s = if t + 4.0 * h <= sol.horizon { h } else { -h };
        (-25.0 * d(t) + 48.0 * d(t + s) - 36.0 * d(t + 2.0 * s) + 16.0 * d(t + 3.0 * s) - 3.0 * d(t + 4.0 * s)) / (12.0 * s)
    }
}

/// Left-hand side of the equilibrium HJB equation evaluated at `(t, x)` under
/// `(ĉ, û)`, with time derivatives taken by finite differences of the
/// computed `a` and `d`. Close to zero for a correct solution.
pub fn hjb_residual_log(sol: &LogConsumptionSolution, t: f64, x: f64) -> f64 {
    let disc = &sol.disc;
    let horizon = sol.horizon;
    let (r, beta, sigma) = (sol.r, sol.beta(), sol.sigma);
    let lx = x.ln();
    let a = sol.a(t);
    let bt = sol.big_b(t);
    let tau = horizon - t;

    // A^u V + ln c at the equilibrium controls.
    let generator = a_dot(sol, t) * lx + d_dot(sol, t) + a * r + 0.5 * a * beta * beta / (sigma * sigma) - 1.0;
    let log_c = lx - a.ln();
    // ∫_t^T φ'(s−t) h^s(t,x) ds, including any point mass of φ' at 0.
    let smooth = simpson(
        |s| disc.phi_prime(s - t) * (lx + sol.big_b(s) - bt - sol.a(s).ln()),
        t,
        horizon,
        A_PANELS,
    );
    let point = disc.jump_at_zero() * (lx - a.ln());
    let terminal = disc.phi_prime(tau) * (lx + sol.big_b(horizon) - bt);
    generator + log_c + smooth + point + terminal
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_unit_rate_gives_unit_a() {
        let d = DiscountFn::exponential(1.0).unwrap();
        let s = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &d, 200).unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert!((s.a(t) - 1.0).abs() < 1e-8);
            assert!((s.c_hat(t, 2.0) - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn exponential_half_rate_a0() {
        let d = DiscountFn::exponential(0.5).unwrap();
        let want = (-0.5f64).exp() + (1.0 - (-0.5f64).exp()) / 0.5;
        assert_relative_eq!(a_quadrature(&d, 1.0, 0.0), want, epsilon = 1e-12);
        assert_relative_eq!(want, 1.393_469_340_3, epsilon = 1e-9);
    }

    #[test]
    fn boundary_values() {
        let d = DiscountFn::hyperbolic(1.0).unwrap();
        let s = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &d, 100).unwrap();
        assert_eq!(s.a(1.0), 1.0);
        assert_eq!(s.d(1.0), 0.0);
        assert_relative_eq!(s.u_hat(0.4, 2.0), 2.0 * 0.05 / 0.04, epsilon = 1e-15);
    }

    #[test]
    fn exponential_d_matches_closed_form() {
        // With a ≡ 1, d(t) = b(1 − e^{−(T−t)}) and b = r + β²/(2σ²) − 1.
        let d = DiscountFn::exponential(1.0).unwrap();
        let s = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &d, 200).unwrap();
        let b = 0.03 + 0.5 * 0.0025 / 0.04 - 1.0;
        for t in [0.0, 0.25, 0.5, 0.9] {
            assert!((s.d(t) - b * (1.0 - (t - 1.0f64).exp())).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_vanishes_for_exponential() {
        let d = DiscountFn::exponential(1.0).unwrap();
        let s = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &d, 200).unwrap();
        assert!(hjb_residual_log(&s, 0.5, 1.0).abs() < 1e-6);
    }

    #[test]
    fn validation_rejects_bad_discount() {
        let d = DiscountFn::custom(|s| 2.0 - s, None, 1.0);
        assert!(d.validate(1.0).is_err());
        let d = DiscountFn::custom(|s| 1.0 - 2.0 * s, None, 1.0);
        assert!(d.validate(1.0).is_err());
    }

    #[test]
    fn custom_derivative_by_differences() {
        let d = DiscountFn::custom(|s| (-0.3 * s).exp(), None, 1.0);
        assert_relative_eq!(d.phi_prime(0.5), -0.3 * (-0.15f64).exp(), epsilon = 1e-8);
        assert_relative_eq!(d.phi_prime(0.0), -0.3, epsilon = 1e-8);
    }

    #[test]
    fn cumulative_rule_is_exact_on_quadratics() {
        let h = 0.1;
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * h).powi(2)).collect();
        let c = cumulative_simpson(&v, h);
        for (j, cj) in c.iter().enumerate() {
            assert!((cj - (j as f64 * h).powi(3) / 3.0).abs() < 1e-14);
        }
    }
}
