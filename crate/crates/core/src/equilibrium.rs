//! Spike-perturbation tests of the equilibrium condition
//! `liminf_{h→0} (J(t,x,û) − J(t,x,u_h)) / h ≥ 0`.
//!
//! A pass only certifies the inequality at the tested `h`; it says nothing
//! about whether the candidate is a maximum or merely a stationary point.

use crate::error::{domain, Result};
use crate::reward::{path_samples, PathSamples, RewardSpec};
use crate::sde::{spike_law, ControlModel, FeedbackLaw, SimConfig};
use crate::stats::{mean, mean_and_se};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SpikeReport {
    pub t: f64,
    pub x: f64,
    pub perturbation: String,
    /// Window lengths after snapping to the simulation grid.
    pub h_values: Vec<f64>,
    pub deltas: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub verdict: Verdict,
}

/// A named perturbation law.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub id: String,
    pub law: FeedbackLaw,
}

impl Perturbation {
    pub fn new(id: impl Into<String>, law: FeedbackLaw) -> Self {
        Self { id: id.into(), law }
    }
}

/// Common-random-number estimate of `J(a) − J(b)` at a single point.
#[derive(Debug, Clone)]
pub struct PairedDifference {
    pub diff: f64,
    pub std_err: f64,
    /// Linearized per-path differences; their mean differs from `diff` only
    /// by the curvature of the wrapper term.
    pub per_path: Vec<f64>,
}

fn pair(spec: &RewardSpec, t: f64, x: f64, a: &PathSamples, b: &PathSamples) -> PairedDifference {
    let add: Vec<f64> = a.additive.iter().zip(&b.additive).map(|(p, q)| p - q).collect();
    let mut diff = mean(&add);
    let per_path = if spec.has_wrapper() {
        let ma = mean(&a.transformed);
        let mb = mean(&b.transformed);
        diff += spec.eval_wrapper(t, x, ma) - spec.eval_wrapper(t, x, mb);
        let slope = spec.wrapper_slope(t, x, 0.5 * (ma + mb));
        add.iter()
            .zip(a.transformed.iter().zip(&b.transformed))
            .map(|(d, (ka, kb))| d + slope * (ka - kb))
            .collect()
    } else {
        add
    };
    let (_, se) = mean_and_se(&per_path);
    PairedDifference {
        diff,
        std_err: se,
        per_path,
    }
}

/// Estimates `J(t,x,a) − J(t,x,b)` with both laws driven by the same draws and
/// differenced path by path before averaging.
pub fn paired_difference(
    model: &ControlModel,
    a: &FeedbackLaw,
    b: &FeedbackLaw,
    spec: &RewardSpec,
    t: f64,
    x: f64,
    config: &SimConfig,
) -> Result<PairedDifference> {
    let sa = path_samples(model, a, spec, t, x, t, x, config)?;
    let sb = path_samples(model, b, spec, t, x, t, x, config)?;
    Ok(pair(spec, t, x, &sa, &sb))
}

/// Snaps each window down to a whole number of simulation steps starting at
/// `t`. Windows must be positive, shorter than `T − t`, and remain distinct.
pub fn snap_windows(t: f64, horizon: f64, n_steps: usize, h_values: &[f64]) -> Result<Vec<(usize, f64)>> {
    let span = horizon - t;
    let dt = span / n_steps as f64;
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(h_values.len());
    for &h in h_values {
        if !(h > 0.0) {
            return domain(format!("window length {h} must be positive"));
        }
        if h >= span {
            return domain(format!("window length {h} must be shorter than T − t = {span}"));
        }
        let m = (h / dt * (1.0 + 1e-12)).floor() as usize;
        if m == 0 {
            return domain(format!("window length {h} is shorter than one simulation step {dt}"));
        }
        if out.iter().any(|(k, _)| *k == m) {
            return domain(format!("window length {h} collides with another after snapping to the step grid"));
        }
        out.push((m, m as f64 * dt));
    }
    Ok(out)
}

fn verdict(h: &[f64], deltas: &[f64], ses: &[f64], tol: f64) -> Verdict {
    let bad: Vec<bool> = deltas.iter().zip(ses).map(|(d, s)| *d < -tol * s).collect();
    if !bad.iter().any(|b| *b) {
        return Verdict::Pass;
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|a, b| h[*a].total_cmp(&h[*b]));
    if order.len() >= 2 && bad[order[0]] && bad[order[1]] {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// Runs the spike test for every `(point, perturbation)` pair. Deltas are
/// `(J(û) − J(u_h))/h` for maximization and the negation for minimization.
#[allow(clippy::too_many_arguments)]
pub fn check_equilibrium(
    model: &ControlModel,
    candidate: &FeedbackLaw,
    perturbations: &[Perturbation],
    spec: &RewardSpec,
    points: &[(f64, f64)],
    h_values: &[f64],
    config: &SimConfig,
    tol_sigmas: f64,
) -> Result<Vec<SpikeReport>> {
    if !(tol_sigmas > 0.0) {
        return domain(format!("tolerance in standard errors must be positive, got {tol_sigmas}"));
    }
    let sign = spec.sense().sign();
    let mut reports = Vec::with_capacity(points.len() * perturbations.len());
    for &(t, x) in points {
        let windows = snap_windows(t, model.horizon(), config.n_steps, h_values)?;
        let base = path_samples(model, candidate, spec, t, x, t, x, config)?;
        for p in perturbations {
            let mut hs = Vec::with_capacity(windows.len());
            let mut deltas = Vec::with_capacity(windows.len());
            let mut ses = Vec::with_capacity(windows.len());
            for &(_, h) in &windows {
                let law = spike_law(candidate, &p.law, t, h);
                let spiked = path_samples(model, &law, spec, t, x, t, x, config)?;
                let d = pair(spec, t, x, &base, &spiked);
                hs.push(h);
                deltas.push(sign * d.diff / h);
                ses.push(d.std_err / h);
            }
            let v = verdict(&hs, &deltas, &ses, tol_sigmas);
            reports.push(SpikeReport {
                t,
                x,
                perturbation: p.id.clone(),
                h_values: hs,
                deltas,
                std_errs: ses,
                verdict: v,
            });
        }
    }
    Ok(reports)
}
