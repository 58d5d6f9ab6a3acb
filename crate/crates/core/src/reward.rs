//! Monte Carlo estimation of reward functionals of the form
//!
//! `J(t,x,u) = E[∫_t^T H(t,x,s,X_s,u_s) ds + F(t,x,X_T)] + G(t,x, E[k(X_T)])`
//!
//! and of the auxiliary expectations `f` and `g` that the extended HJB system
//! represents probabilistically.

use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::sde::{fold_paths, Control, ControlModel, FeedbackLaw, SimConfig};
use crate::stats::{mean, mean_and_se};

type RunningFn = Arc<dyn Fn(f64, f64, f64, f64, &Control) -> f64 + Send + Sync>;
type AnchoredFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type TransformFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// `+1` for maximization, `−1` for minimization.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Maximize => a > b,
            Sense::Minimize => a < b,
        }
    }
}

/// The triple `(H, F, G)` with terminal transform `k` and optimization sense.
/// All anchored functions receive the anchor `(t, x)` as their first two
/// arguments.
#[derive(Clone)]
pub struct RewardSpec {
    running: Option<RunningFn>,
    terminal: Option<AnchoredFn>,
    wrapper: Option<AnchoredFn>,
    transform: TransformFn,
    sense: Sense,
}

impl std::fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RewardSpec")
            .field("running", &self.running.is_some())
            .field("terminal", &self.terminal.is_some())
            .field("wrapper", &self.wrapper.is_some())
            .field("sense", &self.sense)
            .finish()
    }
}

impl RewardSpec {
    pub fn new(sense: Sense) -> Self {
        Self {
            running: None,
            terminal: None,
            wrapper: None,
            transform: Arc::new(|y| y),
            sense,
        }
    }

    /// Running term `H(t_anchor, x_anchor, s, y, u)`.
    pub fn running<H>(mut self, h: H) -> Self
    where
        H: Fn(f64, f64, f64, f64, &Control) -> f64 + Send + Sync + 'static,
    {
        self.running = Some(Arc::new(h));
        self
    }

    /// Terminal term `F(t_anchor, x_anchor, y_T)`.
    pub fn terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.terminal = Some(Arc::new(f));
        self
    }

    /// Nonlinear wrapper `G(t_anchor, x_anchor, m)` of `m = E[k(X_T)]`.
    pub fn wrapper<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.wrapper = Some(Arc::new(g));
        self
    }

    /// Terminal transform `k`; identity by default.
    pub fn transform<K>(mut self, k: K) -> Self
    where
        K: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.transform = Arc::new(k);
        self
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn has_running(&self) -> bool {
        self.running.is_some()
    }

    pub fn has_terminal(&self) -> bool {
        self.terminal.is_some()
    }

    pub fn has_wrapper(&self) -> bool {
        self.wrapper.is_some()
    }

    pub fn eval_running(&self, ta: f64, xa: f64, s: f64, y: f64, u: &Control) -> f64 {
        self.running.as_ref().map_or(0.0, |h| h(ta, xa, s, y, u))
    }

    pub fn eval_terminal(&self, ta: f64, xa: f64, y: f64) -> f64 {
        self.terminal.as_ref().map_or(0.0, |f| f(ta, xa, y))
    }

    pub fn eval_wrapper(&self, ta: f64, xa: f64, m: f64) -> f64 {
        self.wrapper.as_ref().map_or(0.0, |g| g(ta, xa, m))
    }

    pub fn eval_transform(&self, y: f64) -> f64 {
        (self.transform)(y)
    }

    /// Central-difference derivative of `G` in its last argument, step
    /// `max(1e-6, 1e-6·|m|)`. Zero when `G` is absent.
    pub fn wrapper_slope(&self, ta: f64, xa: f64, m: f64) -> f64 {
        match &self.wrapper {
            None => 0.0,
            Some(g) => {
                let h = (1e-6 * m.abs()).max(1e-6);
                (g(ta, xa, m + h) - g(ta, xa, m - h)) / (2.0 * h)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.running.is_none() && self.terminal.is_none() && self.wrapper.is_none() {
            return domain("reward needs at least one of the running, terminal or wrapper terms");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub absorbed_fraction: f64,
}

/// Per-path ingredients of a reward estimate.
#[derive(Debug, Clone)]
pub struct PathSamples {
    /// `∫H ds + F(X_T)` per path.
    pub additive: Vec<f64>,
    /// `k(X_T)` per path.
    pub transformed: Vec<f64>,
    pub absorbed_fraction: f64,
}

struct Acc {
    integral: f64,
    prev: Option<(f64, f64)>,
    last_x: f64,
}

/// Simulates under `law` from `(t, x)` and records the additive and
/// transformed terminal parts of the reward with the anchor frozen at
/// `(anchor_t, anchor_x)`.
#[allow(clippy::too_many_arguments)]
pub fn path_samples(
    model: &ControlModel,
    law: &FeedbackLaw,
    spec: &RewardSpec,
    anchor_t: f64,
    anchor_x: f64,
    t: f64,
    x: f64,
    config: &SimConfig,
) -> Result<PathSamples> {
    let with_running = spec.has_running();
    let rows = fold_paths(
        model,
        law,
        t,
        x,
        config,
        || Acc {
            integral: 0.0,
            prev: None,
            last_x: x,
        },
        |acc, _, s, y, u| {
            if with_running {
                let h = spec.eval_running(anchor_t, anchor_x, s, y, u);
                if let Some((s0, h0)) = acc.prev {
                    acc.integral += 0.5 * (s - s0) * (h0 + h);
                }
                acc.prev = Some((s, h));
            }
            acc.last_x = y;
        },
    )?;
    let mut additive = Vec::with_capacity(rows.len());
    let mut transformed = Vec::with_capacity(rows.len());
    let mut absorbed = 0usize;
    for (i, (acc, a)) in rows.into_iter().enumerate() {
        let add = acc.integral + spec.eval_terminal(anchor_t, anchor_x, acc.last_x);
        let k = spec.eval_transform(acc.last_x);
        if !add.is_finite() || !k.is_finite() {
            return Err(Error::NonFinite(format!("reward sample on path {i}")));
        }
        additive.push(add);
        transformed.push(k);
        absorbed += a as usize;
    }
    let n = additive.len();
    Ok(PathSamples {
        additive,
        transformed,
        absorbed_fraction: absorbed as f64 / n as f64,
    })
}

/// Linearized per-path contributions `additive_i + G'(m)·k_i`. Their sample
/// standard error is the delta-method error of the full estimate, covariance
/// between the two parts included.
pub fn linearized(samples: &PathSamples, slope: f64) -> Vec<f64> {
    if slope == 0.0 {
        return samples.additive.clone();
    }
    samples
        .additive
        .iter()
        .zip(&samples.transformed)
        .map(|(a, k)| a + slope * k)
        .collect()
}

/// Assembles `J` from path samples taken with the anchor at `(t, x)`.
pub fn j_from_samples(spec: &RewardSpec, t: f64, x: f64, samples: &PathSamples) -> Result<JEstimate> {
    let n = samples.additive.len();
    let (base, _) = mean_and_se(&samples.additive);
    let (value, slope) = if spec.has_wrapper() {
        let m = mean(&samples.transformed);
        let gm = spec.eval_wrapper(t, x, m);
        if !m.is_finite() || !gm.is_finite() {
            return Err(Error::NonFinite(format!("wrapper at mean {m}")));
        }
        (base + gm, spec.wrapper_slope(t, x, m))
    } else {
        (base, 0.0)
    };
    let (_, se) = mean_and_se(&linearized(samples, slope));
    Ok(JEstimate {
        mean: value,
        std_err: se,
        n_paths: n,
        absorbed_fraction: samples.absorbed_fraction,
    })
}

/// Estimates `J(t, x, law)`.
pub fn estimate_j(
    model: &ControlModel,
    law: &FeedbackLaw,
    spec: &RewardSpec,
    t: f64,
    x: f64,
    config: &SimConfig,
) -> Result<JEstimate> {
    spec.validate()?;
    let samples = path_samples(model, law, spec, t, x, t, x, config)?;
    j_from_samples(spec, t, x, &samples)
}

/// Estimates `f^{s,y}(t,x) = E_{t,x}[∫H(s,y,r,X_r,u_r)dr + F(s,y,X_T)]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_f(
    model: &ControlModel,
    law: &FeedbackLaw,
    spec: &RewardSpec,
    anchor_t: f64,
    anchor_x: f64,
    t: f64,
    x: f64,
    config: &SimConfig,
) -> Result<JEstimate> {
    let samples = path_samples(model, law, spec, anchor_t, anchor_x, t, x, config)?;
    let (m, se) = mean_and_se(&samples.additive);
    Ok(JEstimate {
        mean: m,
        std_err: se,
        n_paths: samples.additive.len(),
        absorbed_fraction: samples.absorbed_fraction,
    })
}

/// Estimates `g(t,x) = E_{t,x}[k(X_T)]`.
pub fn estimate_g<K>(model: &ControlModel, law: &FeedbackLaw, k: K, t: f64, x: f64, config: &SimConfig) -> Result<JEstimate>
where
    K: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let spec = RewardSpec::new(Sense::Maximize).transform(k);
    let samples = path_samples(model, law, &spec, t, x, t, x, config)?;
    let (m, se) = mean_and_se(&samples.transformed);
    Ok(JEstimate {
        mean: m,
        std_err: se,
        n_paths: samples.transformed.len(),
        absorbed_fraction: samples.absorbed_fraction,
    })
}
