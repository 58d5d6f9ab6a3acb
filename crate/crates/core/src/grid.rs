//! Explicit finite-difference solver for the extended HJB system on a scalar
//! state.
//!
//! Fields are indexed by time level `n` (`t_n = nΔt`, terminal level
//! `nt − 1`) and state node `i`. The anchored field `f(t, x, y)` is stored as
//! a plane `[state i][anchor j]` for the two time levels in flight, with the
//! diagonal `f(t, x_i, x_i)` kept at every level and full planes kept at the
//! initial and terminal levels.
//!
//! At each level the equilibrium control is chosen from the level's fields,
//! using coefficients at `t_n`, and then every field is stepped back one
//! explicit Euler step under that control. First differences are upwinded by
//! the sign of the drift, second differences are central; boundary rows use
//! one-sided first differences and linearly extrapolated second differences.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::reward::{RewardSpec, Sense};
use crate::sde::{ControlModel, FeedbackLaw};

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type AnchoredRunning = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
type FreeRunning = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Iterations of the golden-section refinement around the best control node.
const GOLDEN_ITERS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    pub nu: usize,
    /// Anchor nodes. Must equal `nx` when given: the anchor grid is the state
    /// grid, so the diagonal needs no interpolation.
    pub ny: Option<usize>,
}

impl GridSpec {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize, nt: usize, nu: usize) -> Self {
        Self {
            x_lo,
            x_hi,
            nx,
            nt,
            nu,
            ny: None,
        }
    }

    /// Same spatial and control grid with `nt` chosen as small as the
    /// stability bounds allow for `model`.
    pub fn with_cfl_nt(x_lo: f64, x_hi: f64, nx: usize, nu: usize, model: &ControlModel) -> Result<Self> {
        let mut g = Self::new(x_lo, x_hi, nx, 2, nu);
        g.nt = cfl_time_nodes(model, &g)?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo < self.x_hi) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return domain(format!("state bounds [{}, {}] are empty", self.x_lo, self.x_hi));
        }
        if self.nx < 4 {
            return domain(format!("need at least 4 state nodes for the boundary stencils, got {}", self.nx));
        }
        if self.nt < 2 || self.nu < 2 {
            return domain(format!("need at least 2 time and control nodes, got nt = {}, nu = {}", self.nt, self.nu));
        }
        if let Some(ny) = self.ny {
            if ny != self.nx {
                return domain(format!("anchor nodes must coincide with state nodes (ny = {ny}, nx = {})", self.nx));
            }
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx)
            .map(|i| if i == self.nx - 1 { self.x_hi } else { self.x_lo + i as f64 * dx })
            .collect()
    }

    /// Indices of the nodes in the middle half of the domain.
    pub fn interior_half(&self) -> std::ops::RangeInclusive<usize> {
        let xs = self.xs();
        let w = self.x_hi - self.x_lo;
        let (a, b) = (self.x_lo + 0.25 * w, self.x_hi - 0.25 * w);
        let lo = xs.iter().position(|x| *x >= a - 1e-12 * w).unwrap();
        let hi = xs.iter().rposition(|x| *x <= b + 1e-12 * w).unwrap();
        lo..=hi
    }
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| if k == n - 1 { hi } else { lo + k as f64 * h }).collect()
}

fn time_levels(horizon: f64, nt: usize) -> (Vec<f64>, f64) {
    (uniform(0.0, horizon, nt), horizon / (nt - 1) as f64)
}

fn check_model(model: &ControlModel) -> Result<()> {
    if model.control_dim() != 1 {
        return domain("the grid solver handles scalar controls only");
    }
    if !(model.control_lo()[0] < model.control_hi()[0]) {
        return domain("the grid solver needs a non-degenerate control interval");
    }
    Ok(())
}

fn control_nodes(model: &ControlModel, nu: usize) -> Vec<f64> {
    uniform(model.control_lo()[0], model.control_hi()[0], nu)
}

struct Extremes {
    /// Largest `σ²` and where it occurs.
    s2: (f64, f64, f64, f64),
    /// Largest `|μ|` and where it occurs.
    mu: (f64, f64, f64, f64),
    /// Largest `|μ|/Δx + σ²/Δx²`.
    combined: f64,
}

fn extremes(model: &ControlModel, xs: &[f64], us: &[f64], times: &[f64], dx: f64) -> Result<Extremes> {
    let mut e = Extremes {
        s2: (0.0, times[0], xs[0], us[0]),
        mu: (0.0, times[0], xs[0], us[0]),
        combined: 0.0,
    };
    for &t in times {
        for &x in xs {
            for &u in us {
                let c = [u, 0.0];
                let mu = model.drift(t, x, &c).abs();
                let sg = model.diffusion(t, x, &c);
                let s2 = sg * sg;
                if !mu.is_finite() || !s2.is_finite() {
                    return Err(Error::NonFiniteField {
                        field: "coefficient",
                        t,
                        x,
                    });
                }
                if s2 > e.s2.0 {
                    e.s2 = (s2, t, x, u);
                }
                if mu > e.mu.0 {
                    e.mu = (mu, t, x, u);
                }
                e.combined = e.combined.max(mu / dx + s2 / (dx * dx));
            }
        }
    }
    Ok(e)
}

/// Smallest number of time nodes meeting `Δt ≤ 0.9Δx²/σ²`, `Δt ≤ 0.9Δx/|μ|`
/// and the monotonicity bound `Δt(|μ|/Δx + σ²/Δx²) ≤ 0.9`.
pub fn cfl_time_nodes(model: &ControlModel, grid: &GridSpec) -> Result<usize> {
    check_model(model)?;
    let xs = grid.xs();
    let us = control_nodes(model, grid.nu);
    let dx = grid.dx();
    let horizon = model.horizon();
    let (probe, _) = time_levels(horizon, 101);
    let mut nt = {
        let e = extremes(model, &xs, &us, &probe, dx)?;
        let rate = e.combined.max(e.s2.0 / (dx * dx)).max(e.mu.0 / dx);
        ((horizon * rate / 0.9).ceil() as usize + 1).max(2)
    };
    loop {
        let (times, dt) = time_levels(horizon, nt);
        let e = extremes(model, &xs, &us, &times, dx)?;
        if dt * e.combined <= 0.9 && dt * e.s2.0 <= 0.9 * dx * dx && dt * e.mu.0 <= 0.9 * dx {
            return Ok(nt);
        }
        nt = nt + nt / 20 + 1;
    }
}

/// Checks the explicit-scheme bounds over every level, node and control node.
/// Returns the margin `min(0.9Δx²/σ², 0.9Δx/|μ|)/Δt`.
fn check_cfl(model: &ControlModel, xs: &[f64], us: &[f64], times: &[f64], dx: f64, dt: f64) -> Result<f64> {
    let e = extremes(model, xs, us, times, dx)?;
    let diff_limit = if e.s2.0 > 0.0 { 0.9 * dx * dx / e.s2.0 } else { f64::INFINITY };
    let drift_limit = if e.mu.0 > 0.0 { 0.9 * dx / e.mu.0 } else { f64::INFINITY };
    if dt > diff_limit {
        let (_, t, x, u) = e.s2;
        return Err(Error::Cfl {
            t,
            x,
            u,
            dt,
            limit: diff_limit,
            which: "diffusion",
        });
    }
    if dt > drift_limit {
        let (_, t, x, u) = e.mu;
        return Err(Error::Cfl {
            t,
            x,
            u,
            dt,
            limit: drift_limit,
            which: "drift",
        });
    }
    Ok(diff_limit.min(drift_limit) / dt)
}

fn boundary_width(model: &ControlModel, xs: &[f64], us: &[f64], dx: f64) -> usize {
    let horizon = model.horizon();
    let (times, _) = time_levels(horizon, 11);
    let e = match extremes(model, xs, us, &times, dx) {
        Ok(e) => e,
        Err(_) => return xs.len(),
    };
    ((horizon * e.mu.0 + 3.0 * horizon.sqrt() * e.s2.0.sqrt()) / dx).ceil() as usize
}

/// One-sided and central differences of a field at a node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diffs {
    pub fwd: f64,
    pub bwd: f64,
    pub d2: f64,
}

impl Diffs {
    /// Differences of `w` at node `i`, where `w(k)` returns the field at node `k`.
    fn at<W: Fn(usize) -> f64>(w: W, i: usize, nx: usize, dx: f64) -> Self {
        let second = |k: usize| (w(k + 1) - 2.0 * w(k) + w(k - 1)) / (dx * dx);
        if i == 0 {
            let fwd = (w(1) - w(0)) / dx;
            Self {
                fwd,
                bwd: fwd,
                d2: 2.0 * second(1) - second(2),
            }
        } else if i == nx - 1 {
            let bwd = (w(i) - w(i - 1)) / dx;
            Self {
                fwd: bwd,
                bwd,
                d2: 2.0 * second(i - 1) - second(i - 2),
            }
        } else {
            Self {
                fwd: (w(i + 1) - w(i)) / dx,
                bwd: (w(i) - w(i - 1)) / dx,
                d2: second(i),
            }
        }
    }

    /// `μ·∂w + ½σ²·∂²w` with the first difference upwinded by the sign of `μ`.
    pub fn generator(&self, mu: f64, s2: f64) -> f64 {
        let first = if mu > 0.0 {
            mu * self.fwd
        } else if mu < 0.0 {
            mu * self.bwd
        } else {
            0.0
        };
        first + 0.5 * s2 * self.d2
    }
}

/// Linear stencil of the discrete generator at one node.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
    len: usize,
}

impl Stencil {
    fn add(&mut self, j: usize, w: f64) {
        for k in 0..self.len {
            if self.idx[k] == j {
                self.w[k] += w;
                return;
            }
        }
        self.idx[self.len] = j;
        self.w[self.len] = w;
        self.len += 1;
    }

    fn new(i: usize, nx: usize, dx: f64, mu: f64, s2: f64) -> Self {
        let mut s = Self {
            idx: [0; 4],
            w: [0.0; 4],
            len: 0,
        };
        s.add(i, 0.0);
        let up = if i == nx - 1 {
            false
        } else if i == 0 {
            true
        } else {
            mu > 0.0
        };
        if mu != 0.0 {
            if up {
                s.add(i + 1, mu / dx);
                s.add(i, -mu / dx);
            } else {
                s.add(i, mu / dx);
                s.add(i - 1, -mu / dx);
            }
        }
        let c = 0.5 * s2 / (dx * dx);
        if c != 0.0 {
            if i == 0 {
                for (k, w) in [2.0, -5.0, 4.0, -1.0].into_iter().enumerate() {
                    s.add(k, c * w);
                }
            } else if i == nx - 1 {
                for (k, w) in [2.0, -5.0, 4.0, -1.0].into_iter().enumerate() {
                    s.add(i - k, c * w);
                }
            } else {
                s.add(i - 1, c);
                s.add(i, -2.0 * c);
                s.add(i + 1, c);
            }
        }
        s
    }

    fn apply<W: Fn(usize) -> f64>(&self, w: W) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.len {
            acc += self.w[k] * w(self.idx[k]);
        }
        acc
    }
}

/// Best control node by exhaustive search (lowest index wins ties), then a
/// golden-section refinement on the bracketing interval. The refined control
/// is kept only if it strictly improves on the node.
fn search_control<P: Fn(f64) -> f64>(us: &[f64], sense: Sense, refine: bool, phi: P) -> (f64, f64) {
    let mut best_k = 0;
    let mut best = phi(us[0]);
    for (k, &u) in us.iter().enumerate().skip(1) {
        let v = phi(u);
        if sense.better(v, best) || (best.is_nan() && !v.is_nan()) {
            best = v;
            best_k = k;
        }
    }
    if !refine {
        return (us[best_k], best);
    }
    let mut a = us[best_k.saturating_sub(1)];
    let mut b = us[(best_k + 1).min(us.len() - 1)];
    let score = |u: f64| sense.sign() * phi(u);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..GOLDEN_ITERS {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = score(d);
        }
    }
    let u = 0.5 * (a + b);
    let v = phi(u);
    if sense.better(v, best) {
        (u, v)
    } else {
        (us[best_k], best)
    }
}

/// Time-inconsistent problem in the anchored form used by the grid solver:
/// `J(t,x,u) = E[∫H(x,s,X_s,u_s)ds + F(x,X_T)] + G(x, E[k(X_T)])`.
#[derive(Clone)]
pub struct ExtendedProblem {
    pub model: ControlModel,
    terminal: Fn2,
    wrapper: Option<Fn2>,
    transform: Fn1,
    running: Option<AnchoredRunning>,
    pub sense: Sense,
}

impl std::fmt::Debug for ExtendedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtendedProblem")
            .field("model", &self.model)
            .field("wrapper", &self.wrapper.is_some())
            .field("running", &self.running.is_some())
            .field("sense", &self.sense)
            .finish()
    }
}

impl ExtendedProblem {
    /// Problem with terminal reward `F(x_anchor, y)`.
    pub fn new<F>(model: ControlModel, terminal: F, sense: Sense) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        check_model(&model)?;
        Ok(Self {
            model,
            terminal: Arc::new(terminal),
            wrapper: None,
            transform: Arc::new(|y| y),
            running: None,
            sense,
        })
    }

    /// Wrapper `G(x_anchor, m)`.
    pub fn wrapper<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.wrapper = Some(Arc::new(g));
        self
    }

    pub fn transform<K>(mut self, k: K) -> Self
    where
        K: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.transform = Arc::new(k);
        self
    }

    /// Running term `H(x_anchor, s, y, u)`. The anchor time is not available
    /// on the grid.
    pub fn running<H>(mut self, h: H) -> Self
    where
        H: Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.running = Some(Arc::new(h));
        self
    }

    pub fn has_wrapper(&self) -> bool {
        self.wrapper.is_some()
    }

    fn f(&self, xa: f64, y: f64) -> f64 {
        (self.terminal)(xa, y)
    }

    fn g(&self, xa: f64, m: f64) -> f64 {
        self.wrapper.as_ref().map_or(0.0, |g| g(xa, m))
    }

    fn g_slope(&self, xa: f64, m: f64) -> f64 {
        match &self.wrapper {
            None => 0.0,
            Some(g) => {
                let h = 1e-6 * m.abs().max(1.0);
                (g(xa, m + h) - g(xa, m - h)) / (2.0 * h)
            }
        }
    }

    fn k(&self, y: f64) -> f64 {
        (self.transform)(y)
    }

    fn h(&self, xa: f64, s: f64, y: f64, u: f64) -> f64 {
        self.running.as_ref().map_or(0.0, |h| h(xa, s, y, u))
    }

    /// The same reward as a Monte Carlo reward specification.
    pub fn to_reward_spec(&self) -> RewardSpec {
        let f = self.terminal.clone();
        let k = self.transform.clone();
        let mut spec = RewardSpec::new(self.sense).terminal(move |_, x, y| f(x, y)).transform(move |y| k(y));
        if let Some(g) = self.wrapper.clone() {
            spec = spec.wrapper(move |_, x, m| g(x, m));
        }
        if let Some(h) = self.running.clone() {
            spec = spec.running(move |_, x, s, y, u| h(x, s, y, u[0]));
        }
        spec
    }

    /// Problem with every reward term multiplied by `weight(x_anchor)`.
    pub fn weighted<W>(&self, weight: W) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let w = Arc::new(weight);
        let mut out = self.clone();
        let (f, w1) = (self.terminal.clone(), w.clone());
        out.terminal = Arc::new(move |x, y| w1(x) * f(x, y));
        if let Some(g) = self.wrapper.clone() {
            let w2 = w.clone();
            out.wrapper = Some(Arc::new(move |x, m| w2(x) * g(x, m)));
        }
        if let Some(h) = self.running.clone() {
            let w3 = w.clone();
            out.running = Some(Arc::new(move |x, s, y, u| w3(x) * h(x, s, y, u)));
        }
        out
    }
}

/// Problem whose reward does not depend on the anchor:
/// `J = E[∫H(s,X_s,u_s)ds + F(X_T)] + G(E[k(X_T)])`.
#[derive(Clone)]
pub struct SimplifiedProblem {
    pub model: ControlModel,
    terminal: Fn1,
    wrapper: Option<Fn1>,
    curvature: Option<Fn1>,
    transform: Fn1,
    running: Option<FreeRunning>,
    pub sense: Sense,
}

impl SimplifiedProblem {
    pub fn new<F>(model: ControlModel, terminal: F, sense: Sense) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_model(&model)?;
        Ok(Self {
            model,
            terminal: Arc::new(terminal),
            wrapper: None,
            curvature: None,
            transform: Arc::new(|y| y),
            running: None,
            sense,
        })
    }

    pub fn wrapper<G>(mut self, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.wrapper = Some(Arc::new(g));
        self
    }

    /// Analytic `G''`; otherwise a central difference with step
    /// `1e-4·max(1, |m|)` is used.
    pub fn curvature<C>(mut self, c: C) -> Self
    where
        C: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.curvature = Some(Arc::new(c));
        self
    }

    pub fn transform<K>(mut self, k: K) -> Self
    where
        K: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.transform = Arc::new(k);
        self
    }

    pub fn running<H>(mut self, h: H) -> Self
    where
        H: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.running = Some(Arc::new(h));
        self
    }

    fn g_curvature(&self, m: f64) -> f64 {
        if let Some(c) = &self.curvature {
            return c(m);
        }
        match &self.wrapper {
            None => 0.0,
            Some(g) => {
                let h = 1e-4 * m.abs().max(1.0);
                (g(m + h) - 2.0 * g(m) + g(m - h)) / (h * h)
            }
        }
    }

    fn terminal_value(&self, y: f64) -> f64 {
        (self.terminal)(y) + self.wrapper.as_ref().map_or(0.0, |g| g((self.transform)(y)))
    }

    /// The same problem with anchor arguments added and ignored.
    pub fn to_extended(&self) -> ExtendedProblem {
        let f = self.terminal.clone();
        let k = self.transform.clone();
        let mut p = ExtendedProblem {
            model: self.model.clone(),
            terminal: Arc::new(move |_, y| f(y)),
            wrapper: None,
            transform: Arc::new(move |y| k(y)),
            running: None,
            sense: self.sense,
        };
        if let Some(g) = self.wrapper.clone() {
            p.wrapper = Some(Arc::new(move |_, m| g(m)));
        }
        if let Some(h) = self.running.clone() {
            p.running = Some(Arc::new(move |_, s, y, u| h(s, y, u)));
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub dx: f64,
    pub dt: f64,
    /// `min(0.9Δx²/σ², 0.9Δx/|μ|)/Δt`; at least 1 for an admissible grid.
    pub cfl_margin: f64,
    /// Nodes within `T·max|μ| + 3√T·max σ` of a boundary.
    pub boundary_width: usize,
    /// `(Δx + Δt)·max(1, mean |V(0,·)| over the interior half)`.
    pub scheme_tol: f64,
    /// Largest `|V − f(t,x,x) − G(x, g)|` over interior-half nodes and all
    /// levels (zero for the simplified solver, which has no `f`).
    pub diagonal_gap: f64,
}

/// Per-level difference data of the non-`V` part of the objective, enough to
/// rebuild the equivalent running reward without re-solving.
#[derive(Debug, Clone)]
struct KParts {
    w: Vec<Vec<Diffs>>,
    g: Vec<Vec<Diffs>>,
    gy: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GridSolution {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    pub controls: Vec<f64>,
    pub v: Array2<f64>,
    pub g: Array2<f64>,
    pub u_hat: Array2<f64>,
    /// `f(t, x_i, x_i)` at every level (extended solver only).
    pub diag: Option<Array2<f64>>,
    /// Full `f` planes `[state][anchor]` at the stored levels.
    pub f_snapshots: Vec<(usize, Array2<f64>)>,
    pub diagnostics: Diagnostics,
    pub sense: Sense,
    grid: GridSpec,
    k_parts: Option<KParts>,
}

fn interp_index(pos: f64, n: usize) -> (usize, f64) {
    let p = pos.clamp(0.0, (n - 1) as f64);
    let i = (p.floor() as usize).min(n - 2);
    (i, p - i as f64)
}

impl GridSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.diagnostics.dt
    }

    fn bilinear(&self, field: &Array2<f64>, t: f64, x: f64) -> f64 {
        let (n, a) = interp_index(t / self.dt(), self.times.len());
        let (i, b) = interp_index((x - self.grid.x_lo) / self.diagnostics.dx, self.xs.len());
        let v = |n: usize, i: usize| field[[n, i]];
        let lo = v(n, i) + b * (v(n, i + 1) - v(n, i));
        let hi = v(n + 1, i) + b * (v(n + 1, i + 1) - v(n + 1, i));
        if a == 0.0 {
            lo
        } else {
            lo + a * (hi - lo)
        }
    }

    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        self.bilinear(&self.v, t, x)
    }

    pub fn g_at(&self, t: f64, x: f64) -> f64 {
        self.bilinear(&self.g, t, x)
    }

    pub fn u_at(&self, t: f64, x: f64) -> f64 {
        self.bilinear(&self.u_hat, t, x)
    }

    /// Bilinear `f(t, x, y)` on a stored level.
    pub fn f_at_level(&self, level: usize, x: f64, y: f64) -> Option<f64> {
        let plane = &self.f_snapshots.iter().find(|(l, _)| *l == level)?.1;
        let (i, a) = interp_index((x - self.grid.x_lo) / self.diagnostics.dx, self.xs.len());
        let (j, b) = interp_index((y - self.grid.x_lo) / self.diagnostics.dx, self.xs.len());
        let p = |i: usize, j: usize| plane[[i, j]];
        let lo = p(i, j) + b * (p(i, j + 1) - p(i, j));
        let hi = p(i + 1, j) + b * (p(i + 1, j + 1) - p(i + 1, j));
        Some(lo + a * (hi - lo))
    }

    /// The grid control as a feedback law, interpolated bilinearly and held
    /// constant outside the grid.
    pub fn law(&self) -> FeedbackLaw {
        let s = Arc::new(self.clone_fields_for_law());
        FeedbackLaw::scalar(move |t, x| s.u_at(t, x))
    }

    fn clone_fields_for_law(&self) -> GridSolution {
        GridSolution {
            xs: self.xs.clone(),
            times: self.times.clone(),
            controls: Vec::new(),
            v: Array2::zeros((0, 0)),
            g: Array2::zeros((0, 0)),
            u_hat: self.u_hat.clone(),
            diag: None,
            f_snapshots: Vec::new(),
            diagnostics: self.diagnostics,
            sense: self.sense,
            grid: self.grid.clone(),
            k_parts: None,
        }
    }
}

struct Setup {
    xs: Vec<f64>,
    us: Vec<f64>,
    times: Vec<f64>,
    dx: f64,
    dt: f64,
    cfl_margin: f64,
    boundary_width: usize,
}

fn setup(model: &ControlModel, grid: &GridSpec) -> Result<Setup> {
    grid.validate()?;
    check_model(model)?;
    let xs = grid.xs();
    let us = control_nodes(model, grid.nu);
    let (times, dt) = time_levels(model.horizon(), grid.nt);
    let dx = grid.dx();
    let cfl_margin = check_cfl(model, &xs, &us, &times, dx, dt)?;
    let boundary_width = boundary_width(model, &xs, &us, dx);
    Ok(Setup {
        xs,
        us,
        times,
        dx,
        dt,
        cfl_margin,
        boundary_width,
    })
}

fn check_finite(field: &'static str, values: &[f64], xs: &[f64], t: f64) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFiniteField { field, t, x: xs[i] }),
    }
}

fn scheme_tol(grid: &GridSpec, dx: f64, dt: f64, v0: &[f64]) -> f64 {
    let r = grid.interior_half();
    let n = r.clone().count() as f64;
    let mean_abs = r.map(|i| v0[i].abs()).sum::<f64>() / n;
    (dx + dt) * mean_abs.max(1.0)
}

/// Solves the extended HJB system by one explicit backward sweep.
pub fn solve_extended(problem: &ExtendedProblem, grid: &GridSpec) -> Result<GridSolution> {
    let st = setup(&problem.model, grid)?;
    let model = &problem.model;
    let (nx, nt) = (grid.nx, grid.nt);
    let (xs, us, dx, dt) = (&st.xs, &st.us, st.dx, st.dt);
    let with_g = problem.has_wrapper();

    let mut f: Vec<f64> = (0..nx * nx).map(|ij| problem.f(xs[ij % nx], xs[ij / nx])).collect();
    let mut g: Vec<f64> = xs.iter().map(|&x| problem.k(x)).collect();
    let mut v: Vec<f64> = (0..nx).map(|i| problem.f(xs[i], xs[i]) + problem.g(xs[i], problem.k(xs[i]))).collect();
    check_finite("f", &f, xs, model.horizon())?;
    check_finite("V", &v, xs, model.horizon())?;

    let mut v_out = Array2::zeros((nt, nx));
    let mut g_out = Array2::zeros((nt, nx));
    let mut u_out = Array2::zeros((nt, nx));
    let mut d_out = Array2::zeros((nt, nx));
    let mut snaps = Vec::new();
    let mut parts = KParts {
        w: vec![Vec::new(); nt],
        g: vec![Vec::new(); nt],
        gy: vec![Vec::new(); nt],
    };

    for n in (0..nt).rev() {
        let t = st.times[n];
        if n == nt - 1 || n == 0 {
            snaps.push((n, Array2::from_shape_vec((nx, nx), f.clone()).unwrap()));
        }
        let diag: Vec<f64> = (0..nx).map(|i| f[i * nx + i]).collect();
        let q: Vec<f64> = (0..nx).map(|i| if with_g { problem.g(xs[i], g[i]) } else { 0.0 }).collect();
        let gy: Vec<f64> = (0..nx).map(|i| problem.g_slope(xs[i], g[i])).collect();

        // Control choice at this level.
        let choice: Vec<(f64, Diffs, Diffs, Diffs)> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let s_at = |k: usize| (v[k] - diag[k]) + f[k * nx + i] - q[k];
                let w_at = |k: usize| (-diag[k] + f[k * nx + i]) - q[k];
                let ds = Diffs::at(s_at, i, nx, dx);
                let dw = Diffs::at(w_at, i, nx, dx);
                let dg = Diffs::at(|k| g[k], i, nx, dx);
                let x = xs[i];
                let phi = |u: f64| {
                    let c = [u, 0.0];
                    let mu = model.drift(t, x, &c);
                    let sg = model.diffusion(t, x, &c);
                    let s2 = sg * sg;
                    let mut val = problem.h(x, t, x, u) + ds.generator(mu, s2);
                    if with_g {
                        val += gy[i] * dg.generator(mu, s2);
                    }
                    val
                };
                let (u, _) = search_control(us, problem.sense, true, phi);
                (u, ds, dw, dg)
            })
            .collect();

        for i in 0..nx {
            v_out[[n, i]] = v[i];
            g_out[[n, i]] = g[i];
            u_out[[n, i]] = choice[i].0;
            d_out[[n, i]] = diag[i];
        }
        parts.w[n] = choice.iter().map(|c| c.2).collect();
        parts.g[n] = choice.iter().map(|c| c.3).collect();
        parts.gy[n] = gy.clone();
        if n == 0 {
            break;
        }

        // Step every field back to level n − 1 under the chosen control.
        let stencils: Vec<Stencil> = (0..nx)
            .map(|i| {
                let c = [choice[i].0, 0.0];
                let sg = model.diffusion(t, xs[i], &c);
                Stencil::new(i, nx, dx, model.drift(t, xs[i], &c), sg * sg)
            })
            .collect();
        let mut f_next = vec![0.0; nx * nx];
        f_next.par_chunks_mut(nx).enumerate().for_each(|(i, row)| {
            let st = &stencils[i];
            let u = choice[i].0;
            for (j, out) in row.iter_mut().enumerate() {
                let h = problem.h(xs[j], t, xs[i], u);
                *out = f[i * nx + j] + dt * (st.apply(|k| f[k * nx + j]) + h);
            }
        });
        let g_next: Vec<f64> = (0..nx).map(|i| g[i] + dt * stencils[i].apply(|k| g[k])).collect();
        let v_next: Vec<f64> = (0..nx)
            .map(|i| {
                let st = &stencils[i];
                let h = problem.h(xs[i], t, xs[i], choice[i].0);
                let s = st.apply(|k| (v[k] - diag[k]) + f[k * nx + i] - q[k]);
                if with_g {
                    v[i] + dt * ((s + h) + gy[i] * st.apply(|k| g[k]))
                } else {
                    v[i] + dt * (s + h)
                }
            })
            .collect();
        let tn = st.times[n - 1];
        check_finite("f", &f_next, xs, tn)?;
        check_finite("g", &g_next, xs, tn)?;
        check_finite("V", &v_next, xs, tn)?;
        if !with_g {
            // Without a wrapper the value is the diagonal of f, exactly.
            for i in 0..nx {
                let d = f_next[i * nx + i];
                if (v_next[i] - d).abs() > 1e-9 * (1.0 + v_next[i].abs()) {
                    return Err(Error::Invariant(format!(
                        "V = {} differs from f(t,x,x) = {d} at t = {tn}, x = {}",
                        v_next[i], xs[i]
                    )));
                }
            }
        }
        f = f_next;
        g = g_next;
        v = v_next;
    }
    snaps.sort_by_key(|(l, _)| *l);

    let interior = grid.interior_half();
    let mut gap: f64 = 0.0;
    for n in 0..nt {
        for i in interior.clone() {
            let q = problem.g(xs[i], g_out[[n, i]]);
            gap = gap.max((v_out[[n, i]] - d_out[[n, i]] - q).abs());
        }
    }
    let v0: Vec<f64> = v_out.row(0).to_vec();
    let diagnostics = Diagnostics {
        dx,
        dt,
        cfl_margin: st.cfl_margin,
        boundary_width: st.boundary_width,
        scheme_tol: scheme_tol(grid, dx, dt, &v0),
        diagonal_gap: gap,
    };
    Ok(GridSolution {
        xs: st.xs,
        times: st.times,
        controls: st.us,
        v: v_out,
        g: g_out,
        u_hat: u_out,
        diag: Some(d_out),
        f_snapshots: snaps,
        diagnostics,
        sense: problem.sense,
        grid: grid.clone(),
        k_parts: Some(parts),
    })
}

/// Backward dynamic-programming sweep for a standard problem with running
/// reward `running(n, i, u)` at level `n`, node `i`, and an optional extra
/// term `extra(n, i, u)` added to the objective (used by the simplified
/// solver for its curvature correction). Returns `(V, û)`.
fn dp_sweep<R, E>(
    model: &ControlModel,
    st: &Setup,
    sense: Sense,
    terminal: Vec<f64>,
    refine: bool,
    running: R,
    extra: Option<E>,
) -> Result<(Array2<f64>, Array2<f64>)>
where
    R: Fn(usize, usize, f64) -> f64 + Sync,
    E: Fn(usize, usize, f64, &[f64]) -> f64 + Sync,
{
    let nx = st.xs.len();
    let nt = st.times.len();
    let (xs, dx, dt) = (&st.xs, st.dx, st.dt);
    let mut v = terminal;
    let mut v_out = Array2::zeros((nt, nx));
    let mut u_out = Array2::zeros((nt, nx));
    for n in (0..nt).rev() {
        let t = st.times[n];
        let choice: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let dv = Diffs::at(|k| v[k], i, nx, dx);
                let x = xs[i];
                let phi = |u: f64| {
                    let c = [u, 0.0];
                    let mu = model.drift(t, x, &c);
                    let sg = model.diffusion(t, x, &c);
                    let val = running(n, i, u) + dv.generator(mu, sg * sg);
                    match &extra {
                        Some(e) => val + e(n, i, sg * sg, &v),
                        None => val,
                    }
                };
                search_control(&st.us, sense, refine, phi).0
            })
            .collect();
        for i in 0..nx {
            v_out[[n, i]] = v[i];
            u_out[[n, i]] = choice[i];
        }
        if n == 0 {
            break;
        }
        let v_next: Vec<f64> = (0..nx)
            .map(|i| {
                let u = choice[i];
                let c = [u, 0.0];
                let sg = model.diffusion(t, xs[i], &c);
                let s2 = sg * sg;
                let st_i = Stencil::new(i, nx, dx, model.drift(t, xs[i], &c), s2);
                let base = st_i.apply(|k| v[k]) + running(n, i, u);
                match &extra {
                    Some(e) => v[i] + dt * (base + e(n, i, s2, &v)),
                    None => v[i] + dt * base,
                }
            })
            .collect();
        check_finite("V", &v_next, xs, st.times[n - 1])?;
        v = v_next;
    }
    Ok((v_out, u_out))
}

type NoExtra = fn(usize, usize, f64, &[f64]) -> f64;

/// Standard (time-consistent) problem `max E[∫H(s,X_s,u_s)ds + Φ(X_T)]`
/// solved by a plain dynamic-programming sweep with the same discretization
/// and control search as the extended solver. Returns `(V, û)`.
pub fn solve_standard<H, P>(
    model: &ControlModel,
    grid: &GridSpec,
    sense: Sense,
    running: H,
    terminal: P,
) -> Result<(Array2<f64>, Array2<f64>)>
where
    H: Fn(f64, f64, f64) -> f64 + Sync,
    P: Fn(f64) -> f64,
{
    let st = setup(model, grid)?;
    let term: Vec<f64> = st.xs.iter().map(|&x| terminal(x)).collect();
    let (times, xs) = (st.times.clone(), st.xs.clone());
    dp_sweep(model, &st, sense, term, true, |n, i, u| running(times[n], xs[i], u), None::<NoExtra>)
}

/// Solves `sup_u { A^u V + H − ½σ²G''(g)g_x² } = 0` together with the
/// `g` equation. Only valid for anchor-free rewards.
pub fn solve_simplified(problem: &SimplifiedProblem, grid: &GridSpec) -> Result<GridSolution> {
    let st = setup(&problem.model, grid)?;
    let model = &problem.model;
    let (nx, nt) = (grid.nx, grid.nt);
    let (dx, dt) = (st.dx, st.dt);
    let xs = st.xs.clone();
    let times = st.times.clone();

    // g does not depend on V, but its control does; sweep both together.
    let mut v: Vec<f64> = xs.iter().map(|&x| problem.terminal_value(x)).collect();
    let mut g: Vec<f64> = xs.iter().map(|&x| (problem.transform)(x)).collect();
    let mut v_out = Array2::zeros((nt, nx));
    let mut g_out = Array2::zeros((nt, nx));
    let mut u_out = Array2::zeros((nt, nx));
    let h = |s: f64, y: f64, u: f64| problem.running.as_ref().map_or(0.0, |h| h(s, y, u));

    for n in (0..nt).rev() {
        let t = times[n];
        // Curvature correction factor −½ G''(g) g_x² per node, central g_x.
        let corr: Vec<f64> = (0..nx)
            .map(|i| {
                let gx = if i == 0 {
                    (g[1] - g[0]) / dx
                } else if i == nx - 1 {
                    (g[i] - g[i - 1]) / dx
                } else {
                    (g[i + 1] - g[i - 1]) / (2.0 * dx)
                };
                -0.5 * problem.g_curvature(g[i]) * gx * gx
            })
            .collect();
        let choice: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let dv = Diffs::at(|k| v[k], i, nx, dx);
                let x = xs[i];
                let phi = |u: f64| {
                    let c = [u, 0.0];
                    let mu = model.drift(t, x, &c);
                    let sg = model.diffusion(t, x, &c);
                    let s2 = sg * sg;
                    (h(t, x, u) + dv.generator(mu, s2)) + s2 * corr[i]
                };
                search_control(&st.us, problem.sense, true, phi).0
            })
            .collect();
        for i in 0..nx {
            v_out[[n, i]] = v[i];
            g_out[[n, i]] = g[i];
            u_out[[n, i]] = choice[i];
        }
        if n == 0 {
            break;
        }
        let mut v_next = vec![0.0; nx];
        let mut g_next = vec![0.0; nx];
        for i in 0..nx {
            let u = choice[i];
            let c = [u, 0.0];
            let sg = model.diffusion(t, xs[i], &c);
            let s2 = sg * sg;
            let sten = Stencil::new(i, nx, dx, model.drift(t, xs[i], &c), s2);
            v_next[i] = v[i] + dt * ((sten.apply(|k| v[k]) + h(t, xs[i], u)) + s2 * corr[i]);
            g_next[i] = g[i] + dt * sten.apply(|k| g[k]);
        }
        check_finite("V", &v_next, &xs, times[n - 1])?;
        check_finite("g", &g_next, &xs, times[n - 1])?;
        v = v_next;
        g = g_next;
    }
    let v0: Vec<f64> = v_out.row(0).to_vec();
    let diagnostics = Diagnostics {
        dx,
        dt,
        cfl_margin: st.cfl_margin,
        boundary_width: st.boundary_width,
        scheme_tol: scheme_tol(grid, dx, dt, &v0),
        diagonal_gap: 0.0,
    };
    Ok(GridSolution {
        xs: st.xs,
        times: st.times,
        controls: st.us,
        v: v_out,
        g: g_out,
        u_hat: u_out,
        diag: None,
        f_snapshots: Vec::new(),
        diagnostics,
        sense: problem.sense,
        grid: grid.clone(),
        k_parts: None,
    })
}

/// The equivalent standard problem: running reward `K(t,x,u)` sampled on the
/// grid, its terminal reward, and the dynamic-programming solution over it.
#[derive(Debug, Clone)]
pub struct EquivalentStandard {
    /// `nt × nx × nu` samples of `K` at the control nodes.
    pub k: Array3<f64>,
    pub terminal: Vec<f64>,
    /// DP value over `K` (control nodes only, no refinement).
    pub value: Array2<f64>,
    pub u: Array2<f64>,
    /// Largest `|V_DP − V| / max(1, |V|)` over interior-half nodes at `t = 0`.
    pub max_rel_gap: f64,
    /// Largest `|K − H|` over all samples.
    pub max_correction: f64,
}

/// Builds `K(t,x,u) = H(x,t,x,u) + A^u(−f(·,·,·)|diag + f^x − G⋄g) + G_y A^u g`
/// from the solved fields and verifies that a standard DP sweep over it
/// reproduces the equilibrium value.
pub fn build_equivalent_standard(problem: &ExtendedProblem, solution: &GridSolution) -> Result<EquivalentStandard> {
    let parts = solution
        .k_parts
        .as_ref()
        .ok_or_else(|| Error::Domain("equivalent problem needs a solution from the extended solver".into()))?;
    let grid = solution.grid();
    if grid.nx != solution.xs.len() {
        return domain("solution does not match its grid");
    }
    let st = setup(&problem.model, grid)?;
    let model = &problem.model;
    let (nt, nx, nu) = (grid.nt, grid.nx, grid.nu);
    let with_g = problem.has_wrapper();
    let mut k = Array3::zeros((nt, nx, nu));
    let mut max_correction: f64 = 0.0;
    for n in 0..nt {
        let t = st.times[n];
        for i in 0..nx {
            let x = st.xs[i];
            for (a, &u) in st.us.iter().enumerate() {
                let c = [u, 0.0];
                let mu = model.drift(t, x, &c);
                let sg = model.diffusion(t, x, &c);
                let s2 = sg * sg;
                let h = problem.h(x, t, x, u);
                let mut val = h + parts.w[n][i].generator(mu, s2);
                if with_g {
                    val += parts.gy[n][i] * parts.g[n][i].generator(mu, s2);
                }
                max_correction = max_correction.max((val - h).abs());
                k[[n, i, a]] = val;
            }
        }
    }
    let terminal: Vec<f64> = st.xs.iter().map(|&x| problem.f(x, x) + problem.g(x, problem.k(x))).collect();
    let us = st.us.clone();
    let kref = &k;
    let (value, u) = dp_sweep(
        model,
        &st,
        problem.sense,
        terminal.clone(),
        false,
        |n, i, uu| {
            let a = us.iter().position(|c| *c == uu).unwrap();
            kref[[n, i, a]]
        },
        None::<NoExtra>,
    )?;
    let mut gap: f64 = 0.0;
    for i in grid.interior_half() {
        let v = solution.v[[0, i]];
        gap = gap.max((value[[0, i]] - v).abs() / v.abs().max(1.0));
    }
    Ok(EquivalentStandard {
        k,
        terminal,
        value,
        u,
        max_rel_gap: gap,
        max_correction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingReport {
    /// Fraction of interior-half nodes, over all levels, where the weighted
    /// control is within one control step of the unweighted one.
    pub argmax_agreement: f64,
    /// Largest `|V_φ/(φV) − 1|` over interior-half nodes at all levels.
    pub max_ratio_dev: f64,
}

/// Solves the problem with all reward terms multiplied by `weight(anchor)`
/// and compares control and value with the unweighted solution.
pub fn scaling_check<W>(problem: &ExtendedProblem, weight: W, grid: &GridSpec) -> Result<ScalingReport>
where
    W: Fn(f64) -> f64 + Send + Sync + Clone + 'static,
{
    for x in grid.xs() {
        let w = weight(x);
        if !(w > 0.0 && w.is_finite()) {
            return domain(format!("weight must be positive, got {w} at x = {x}"));
        }
    }
    let base = solve_extended(problem, grid)?;
    let weighted = solve_extended(&problem.weighted(weight.clone()), grid)?;
    let du = base.controls[1] - base.controls[0];
    let mut agree = 0usize;
    let mut total = 0usize;
    let mut dev: f64 = 0.0;
    for n in 0..grid.nt {
        for i in grid.interior_half() {
            total += 1;
            if (weighted.u_hat[[n, i]] - base.u_hat[[n, i]]).abs() <= du * (1.0 + 1e-9) {
                agree += 1;
            }
            let ratio = weighted.v[[n, i]] / (weight(base.xs[i]) * base.v[[n, i]]);
            dev = dev.max((ratio - 1.0).abs());
        }
    }
    Ok(ScalingReport {
        argmax_agreement: agree as f64 / total as f64,
        max_ratio_dev: dev,
    })
}
