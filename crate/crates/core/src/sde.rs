//! Controlled scalar diffusions and their Euler–Maruyama simulation.
//!
//! Controls are carried as a fixed two-slot array so that problems with a
//! consumption control next to the portfolio control share the same machinery
//! as scalar problems. Scalar models simply ignore the second slot.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};

pub const MAX_CONTROL_DIM: usize = 2;

/// A control value. Slots beyond the model's `control_dim` are ignored.
pub type Control = [f64; MAX_CONTROL_DIM];

type CoefFn = Arc<dyn Fn(f64, f64, &Control) -> f64 + Send + Sync>;
type LawFn = Arc<dyn Fn(f64, f64) -> Control + Send + Sync>;

/// Controlled diffusion `dX = μ(t,X,u)dt + σ(t,X,u)dW` on `[0, T]` with box
/// constraints on the control.
#[derive(Clone)]
pub struct ControlModel {
    drift: CoefFn,
    diffusion: CoefFn,
    control_dim: usize,
    control_lo: Control,
    control_hi: Control,
    horizon: f64,
    positive_state: bool,
}

impl std::fmt::Debug for ControlModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlModel")
            .field("control_dim", &self.control_dim)
            .field("control_lo", &self.control_lo)
            .field("control_hi", &self.control_hi)
            .field("horizon", &self.horizon)
            .field("positive_state", &self.positive_state)
            .finish_non_exhaustive()
    }
}

impl ControlModel {
    /// General constructor for a model with `control_dim` control slots.
    pub fn new<D, S>(
        control_dim: usize,
        drift: D,
        diffusion: S,
        control_lo: Control,
        control_hi: Control,
        horizon: f64,
    ) -> Result<Self>
    where
        D: Fn(f64, f64, &Control) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64, &Control) -> f64 + Send + Sync + 'static,
    {
        if control_dim == 0 || control_dim > MAX_CONTROL_DIM {
            return domain(format!("control dimension {control_dim} not in 1..={MAX_CONTROL_DIM}"));
        }
        for c in 0..control_dim {
            if !(control_lo[c] <= control_hi[c]) {
                return domain(format!(
                    "control bounds [{}, {}] in slot {c} are empty",
                    control_lo[c], control_hi[c]
                ));
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("horizon must be positive and finite, got {horizon}"));
        }
        Ok(Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            control_dim,
            control_lo,
            control_hi,
            horizon,
            positive_state: false,
        })
    }

    /// Model with a single scalar control.
    pub fn scalar<D, S>(drift: D, diffusion: S, control_lo: f64, control_hi: f64, horizon: f64) -> Result<Self>
    where
        D: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            1,
            move |t, x, u: &Control| drift(t, x, u[0]),
            move |t, x, u: &Control| diffusion(t, x, u[0]),
            [control_lo, 0.0],
            [control_hi, 0.0],
            horizon,
        )
    }

    /// Marks the state as required to stay positive. Simulated paths that
    /// reach the floor `1e-6·x0` are absorbed there and flagged.
    pub fn with_positive_state(mut self) -> Self {
        self.positive_state = true;
        self
    }

    pub fn drift(&self, t: f64, x: f64, u: &Control) -> f64 {
        (self.drift)(t, x, u)
    }

    pub fn diffusion(&self, t: f64, x: f64, u: &Control) -> f64 {
        (self.diffusion)(t, x, u)
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn control_lo(&self) -> Control {
        self.control_lo
    }

    pub fn control_hi(&self) -> Control {
        self.control_hi
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn positive_state(&self) -> bool {
        self.positive_state
    }

    /// Clamps each active slot into its bounds and zeroes unused slots.
    pub fn clamp(&self, u: Control) -> Control {
        let mut out = [0.0; MAX_CONTROL_DIM];
        for c in 0..self.control_dim {
            out[c] = u[c].clamp(self.control_lo[c], self.control_hi[c]);
        }
        out
    }
}

/// Deterministic feedback map `(t, x) -> u`.
#[derive(Clone)]
pub struct FeedbackLaw {
    f: LawFn,
}

impl std::fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FeedbackLaw")
    }
}

impl FeedbackLaw {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> Control + Send + Sync + 'static,
    {
        Self { f: Arc::new(f) }
    }

    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(move |t, x| [f(t, x), 0.0])
    }

    pub fn constant(u: Control) -> Self {
        Self::new(move |_, _| u)
    }

    pub fn eval(&self, t: f64, x: f64) -> Control {
        (self.f)(t, x)
    }

    /// Law `u(t,x) + shift`, slot by slot.
    pub fn offset(&self, shift: Control) -> Self {
        let base = self.clone();
        Self::new(move |t, x| {
            let mut u = base.eval(t, x);
            for (a, b) in u.iter_mut().zip(shift) {
                *a += b;
            }
            u
        })
    }

    /// Law `factor · u(t,x)`, slot by slot.
    pub fn scale(&self, factor: Control) -> Self {
        let base = self.clone();
        Self::new(move |t, x| {
            let mut u = base.eval(t, x);
            for (a, b) in u.iter_mut().zip(factor) {
                *a *= b;
            }
            u
        })
    }
}

/// Law equal to `perturb` on `[t, t+h)` and to `base` elsewhere.
pub fn spike_law(base: &FeedbackLaw, perturb: &FeedbackLaw, t: f64, h: f64) -> FeedbackLaw {
    let base = base.clone();
    let perturb = perturb.clone();
    let end = t + h;
    FeedbackLaw::new(move |s, y| {
        if t <= s && s < end {
            perturb.eval(s, y)
        } else {
            base.eval(s, y)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            antithetic: false,
        }
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return domain("n_paths must be at least 1");
        }
        if self.n_steps == 0 {
            return domain("n_steps must be at least 1");
        }
        Ok(())
    }

    /// RNG stream used by path `i`, and whether its draws are negated.
    pub fn stream_of(&self, path: usize) -> (u64, bool) {
        if self.antithetic {
            ((path / 2) as u64, path % 2 == 1)
        } else {
            (path as u64, false)
        }
    }
}

/// Simulated paths stored in full. Suitable for moderate path counts; the
/// estimators stream paths through [`fold_paths`] instead.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub times: Array1<f64>,
    /// `n_paths × (n_steps+1)`.
    pub states: Array2<f64>,
    /// `n_paths × (n_steps+1) × control_dim`. The control at the final node is
    /// the law evaluated there; it is recorded for quadrature but never applied.
    pub controls: Array3<f64>,
    pub absorbed: Vec<bool>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.states.nrows()
    }

    pub fn absorbed_fraction(&self) -> f64 {
        self.absorbed.iter().filter(|a| **a).count() as f64 / self.absorbed.len() as f64
    }
}

/// Uniform time grid from `t0` to `T` with `n_steps` intervals.
pub fn time_grid(t0: f64, horizon: f64, n_steps: usize) -> (Array1<f64>, f64) {
    let dt = (horizon - t0) / n_steps as f64;
    let times = Array1::from_shape_fn(n_steps + 1, |k| if k == n_steps { horizon } else { t0 + k as f64 * dt });
    (times, dt)
}

fn check_start(model: &ControlModel, t0: f64, x0: f64) -> Result<()> {
    if !(t0 < model.horizon) {
        return domain(format!("start time {t0} must precede the horizon {}", model.horizon));
    }
    if !x0.is_finite() {
        return domain(format!("initial state {x0} is not finite"));
    }
    Ok(())
}

/// Runs one Euler–Maruyama path driven by `noise(k)` (a standard normal per
/// step) and calls `visit(k, t_k, x_k, u_k)` at every node. Returns whether
/// the path was absorbed.
#[allow(clippy::too_many_arguments)]
fn drive<N, V>(
    model: &ControlModel,
    law: &FeedbackLaw,
    times: &Array1<f64>,
    dt: f64,
    x0: f64,
    path: usize,
    mut noise: N,
    mut visit: V,
) -> Result<bool>
where
    N: FnMut(usize) -> f64,
    V: FnMut(usize, f64, f64, &Control),
{
    let n_steps = times.len() - 1;
    let floor = 1e-6 * x0.abs();
    let sqrt_dt = dt.sqrt();
    let mut x = x0;
    let mut absorbed = false;
    for k in 0..n_steps {
        let t = times[k];
        let u = model.clamp(law.eval(t, x));
        visit(k, t, x, &u);
        // Draws are always consumed so that absorbed and live paths stay on
        // common random numbers across laws.
        let z = noise(k);
        if absorbed {
            continue;
        }
        let next = x + model.drift(t, x, &u) * dt + model.diffusion(t, x, &u) * sqrt_dt * z;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { path, step: k + 1 });
        }
        x = next;
        if model.positive_state && x <= floor {
            x = floor;
            absorbed = true;
        }
    }
    let t = times[n_steps];
    let u = model.clamp(law.eval(t, x));
    visit(n_steps, t, x, &u);
    Ok(absorbed)
}

/// Simulates every path and folds it into a per-path accumulator. The
/// accumulators are returned in path order together with absorption flags.
pub fn fold_paths<A, I, V>(
    model: &ControlModel,
    law: &FeedbackLaw,
    t0: f64,
    x0: f64,
    config: &SimConfig,
    init: I,
    visit: V,
) -> Result<Vec<(A, bool)>>
where
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, usize, f64, f64, &Control) + Sync,
{
    config.validate()?;
    check_start(model, t0, x0)?;
    let (times, dt) = time_grid(t0, model.horizon, config.n_steps);
    (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let (stream, negate) = config.stream_of(p);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream);
            let sign = if negate { -1.0 } else { 1.0 };
            let mut acc = init();
            let absorbed = drive(
                model,
                law,
                &times,
                dt,
                x0,
                p,
                |_| sign * rng.sample::<f64, _>(StandardNormal),
                |k, t, x, u| visit(&mut acc, k, t, x, u),
            )?;
            Ok((acc, absorbed))
        })
        .collect()
}

/// Simulates and stores full paths.
pub fn simulate_paths(
    model: &ControlModel,
    law: &FeedbackLaw,
    t0: f64,
    x0: f64,
    config: &SimConfig,
) -> Result<PathBatch> {
    let n = config.n_steps + 1;
    let dim = model.control_dim;
    let rows = fold_paths(
        model,
        law,
        t0,
        x0,
        config,
        || (Vec::with_capacity(n), Vec::with_capacity(n * dim)),
        |acc: &mut (Vec<f64>, Vec<f64>), _, _, x, u| {
            acc.0.push(x);
            acc.1.extend_from_slice(&u[..dim]);
        },
    )?;
    let (times, _) = time_grid(t0, model.horizon, config.n_steps);
    let mut states = Array2::zeros((config.n_paths, n));
    let mut controls = Array3::zeros((config.n_paths, n, dim));
    let mut absorbed = Vec::with_capacity(config.n_paths);
    for (p, ((xs, us), a)) in rows.into_iter().enumerate() {
        for k in 0..n {
            states[[p, k]] = xs[k];
            for c in 0..dim {
                controls[[p, k, c]] = us[k * dim + c];
            }
        }
        absorbed.push(a);
    }
    Ok(PathBatch {
        times,
        states,
        controls,
        absorbed,
    })
}

/// Runs a single path on the uniform grid implied by the given Brownian
/// increments (`increments[k]` is `W(t_{k+1}) − W(t_k)`). Returns the states.
pub fn simulate_with_increments(
    model: &ControlModel,
    law: &FeedbackLaw,
    t0: f64,
    x0: f64,
    increments: &[f64],
) -> Result<Vec<f64>> {
    if increments.is_empty() {
        return domain("at least one Brownian increment is required");
    }
    check_start(model, t0, x0)?;
    let (times, dt) = time_grid(t0, model.horizon, increments.len());
    let scale = 1.0 / dt.sqrt();
    let mut xs = Vec::with_capacity(increments.len() + 1);
    drive(model, law, &times, dt, x0, 0, |k| increments[k] * scale, |_, _, x, _| xs.push(x))?;
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm(alpha: f64, sigma: f64) -> ControlModel {
        ControlModel::scalar(move |_, x, _| alpha * x, move |_, x, _| sigma * x, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn degenerate_dynamics_stay_put() {
        let m = ControlModel::scalar(|_, _, _| 0.0, |_, _, _| 0.0, -1.0, 1.0, 1.0).unwrap();
        let b = simulate_paths(&m, &FeedbackLaw::scalar(|_, _| 0.3), 0.0, 1.0, &SimConfig::new(7, 13, 1)).unwrap();
        assert!(b.states.iter().all(|x| *x == 1.0));
        assert_eq!(b.states.dim(), (7, 14));
    }

    #[test]
    fn start_at_horizon_is_rejected() {
        let m = gbm(0.0, 0.1);
        let r = simulate_paths(&m, &FeedbackLaw::scalar(|_, _| 0.0), 1.0, 1.0, &SimConfig::new(2, 2, 1));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn non_finite_state_names_path_and_step() {
        let m = ControlModel::scalar(|_, x, _| x * 1e300, |_, _, _| 0.0, 0.0, 0.0, 1.0).unwrap();
        let r = simulate_paths(&m, &FeedbackLaw::scalar(|_, _| 0.0), 0.0, 1e10, &SimConfig::new(1, 4, 1));
        match r {
            Err(Error::NonFiniteState { path: 0, step }) => assert!(step >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn controls_are_clamped() {
        let m = ControlModel::scalar(|_, _, u| u, |_, _, _| 0.1, -0.5, 0.5, 1.0).unwrap();
        let law = FeedbackLaw::scalar(|t, x| 10.0 * (x - 1.0) + 3.0 * t - 1.0);
        let b = simulate_paths(&m, &law, 0.0, 1.0, &SimConfig::new(20, 50, 3)).unwrap();
        assert!(b.controls.iter().all(|u| (-0.5..=0.5).contains(u)));
    }

    #[test]
    fn antithetic_pairs_cancel() {
        let m = ControlModel::scalar(|_, _, _| 0.0, |_, _, _| 0.3, 0.0, 0.0, 1.0).unwrap();
        let cfg = SimConfig::new(10, 25, 9).antithetic(true);
        // Starting from zero the paired paths are exact mirror images, so the
        // increment sums vanish without rounding.
        let b = simulate_paths(&m, &FeedbackLaw::scalar(|_, _| 0.0), 0.0, 0.0, &cfg).unwrap();
        for i in 0..5 {
            for k in 0..25 {
                let d0 = b.states[[2 * i, k + 1]] - b.states[[2 * i, k]];
                let d1 = b.states[[2 * i + 1, k + 1]] - b.states[[2 * i + 1, k]];
                assert_eq!(d0 + d1, 0.0);
            }
        }
    }

    #[test]
    fn path_is_invariant_under_path_count() {
        let m = gbm(0.05, 0.2);
        let law = FeedbackLaw::scalar(|_, _| 0.0);
        let a = simulate_paths(&m, &law, 0.0, 1.0, &SimConfig::new(3, 40, 5)).unwrap();
        let b = simulate_paths(&m, &law, 0.0, 1.0, &SimConfig::new(11, 40, 5)).unwrap();
        for p in 0..3 {
            assert_eq!(a.states.row(p), b.states.row(p));
        }
    }

    #[test]
    fn absorption_floors_and_flags() {
        let m = ControlModel::scalar(|_, _, _| -50.0, |_, _, _| 0.0, 0.0, 0.0, 1.0)
            .unwrap()
            .with_positive_state();
        let b = simulate_paths(&m, &FeedbackLaw::scalar(|_, _| 0.0), 0.0, 1.0, &SimConfig::new(4, 10, 1)).unwrap();
        assert_eq!(b.absorbed_fraction(), 1.0);
        assert!(b.states.iter().all(|x| *x >= 1e-6));
    }

    #[test]
    fn spike_law_pieces() {
        let base = FeedbackLaw::scalar(|_, _| 0.0);
        let pert = FeedbackLaw::scalar(|_, _| 1.0);
        let l = spike_law(&base, &pert, 0.0, 0.5);
        assert_eq!(l.eval(0.0, 3.0)[0], 1.0);
        assert_eq!(l.eval(0.25, -2.0)[0], 1.0);
        assert_eq!(l.eval(0.5, 0.0)[0], 0.0);
        assert_eq!(l.eval(0.75, 9.0)[0], 0.0);
    }

    #[test]
    fn increments_driver_matches_closed_form_without_noise() {
        let m = gbm(0.1, 0.0);
        let xs = simulate_with_increments(&m, &FeedbackLaw::scalar(|_, _| 0.0), 0.0, 1.0, &[0.0; 4]).unwrap();
        assert!((xs[4] - 1.025f64.powi(4)).abs() < 1e-15);
    }
}
