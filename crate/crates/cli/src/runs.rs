//! One pipeline per subcommand. Each writes its tables into the output
//! directory and returns the summary of the checks it ran.

use std::path::Path;

use anyhow::Result;
use tic_core::cir::{certify_sdf, CirParams, CirSolution, Utility};
use tic_core::discounting::{hjb_residual_log, solve_log_consumption, DiscountFn, LogConsumptionSolution};
use tic_core::equilibrium::{check_equilibrium, Perturbation, Verdict};
use tic_core::grid::{build_equivalent_standard, scaling_check, solve_extended, solve_simplified, GridSpec};
use tic_core::lq::{lq_value_check, solve_lq, LqParams, COEFFS};
use tic_core::mean_variance::{equivalent_standard_objective, solve_mv, solve_mv_wealth, MvParams};
use tic_core::reward::{estimate_g, estimate_j, JEstimate, RewardSpec};
use tic_core::sde::{ControlModel, FeedbackLaw, SimConfig};

use crate::output::{Summary, Table};
use crate::row;
use crate::settings::{int, num, text, ConfigError, Key, Settings};

pub const MV_KEYS: &[Key] = &[
    num("alpha", 0.08, "drift of the risky asset"),
    num("r", 0.03, "short rate"),
    num("sigma", 0.2, "volatility of the risky asset"),
    num("gamma", 2.0, "risk aversion"),
    num("T", 1.0, "horizon"),
    num("x0", 1.0, "initial wealth for the certification"),
    num("u-max", 50.0, "bound on the risky amount in simulation"),
    int("paths", 100_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const WEALTH_KEYS: &[Key] = &[
    num("alpha", 0.08, "drift of the risky asset"),
    num("r", 0.03, "short rate"),
    num("sigma", 0.2, "volatility of the risky asset"),
    num("gamma", 2.0, "risk aversion scale (risk aversion is gamma/x)"),
    num("T", 1.0, "horizon"),
    num("x0", 1.0, "initial wealth for the certification"),
    num("u-max", 50.0, "bound on the risky amount in simulation"),
    int("ode-steps", 2000, "RK4 steps"),
    int("paths", 100_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const DISCOUNT_KEYS: &[Key] = &[
    text("kind", "hyperbolic", "exponential | hyperbolic | quasi-hyperbolic"),
    num("delta", 1.0, "exponential rate"),
    num("k", 1.0, "hyperbolic rate"),
    num("m", 1.0, "hyperbolic power"),
    num("qh-beta", 0.7, "quasi-hyperbolic present-bias factor"),
    num("alpha", 0.08, "drift of the risky asset"),
    num("r", 0.03, "short rate"),
    num("sigma", 0.2, "volatility of the risky asset"),
    num("T", 1.0, "horizon"),
    num("x0", 1.0, "initial wealth for the certification"),
    int("ode-steps", 400, "RK4 steps for d"),
    int("paths", 100_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const LQ_KEYS: &[Key] = &[
    num("a", 0.4, "state drift coefficient"),
    num("b", 0.7, "control gain"),
    num("sigma", 0.3, "noise level"),
    num("gamma", 2.0, "terminal penalty weight"),
    num("T", 1.0, "horizon"),
    int("ode-steps", 2000, "RK4 steps"),
    int("paths", 100_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const CIR_KEYS: &[Key] = &[
    text("utility", "log", "log | power"),
    num("gamma", 0.5, "power utility exponent"),
    text("kind", "exponential", "exponential | hyperbolic | quasi-hyperbolic"),
    num("delta", 0.05, "exponential rate"),
    num("k", 1.0, "hyperbolic rate"),
    num("m", 2.0, "hyperbolic power"),
    num("qh-beta", 0.7, "quasi-hyperbolic present-bias factor"),
    num("alpha", 0.08, "technology drift"),
    num("sigma", 0.2, "technology volatility"),
    num("T", 1.0, "simulation horizon"),
    int("checkpoints", 10, "martingale checkpoints"),
    int("paths", 100_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const GRID_KEYS: &[Key] = &[
    text("example", "mv", "built-in problem (mv)"),
    num("alpha", 0.08, "drift of the risky asset"),
    num("r", 0.03, "short rate"),
    num("sigma", 0.2, "volatility of the risky asset"),
    num("gamma", 2.0, "risk aversion"),
    num("T", 1.0, "horizon"),
    num("x-lo", 0.2, "lower state bound"),
    num("x-hi", 5.0, "upper state bound"),
    num("u-lo", 0.0, "lower control bound"),
    num("u-hi", 2.0, "upper control bound"),
    int("nx", 201, "state nodes"),
    int("nu", 101, "control nodes"),
    int("nt", 0, "time nodes (0 picks the smallest stable count)"),
    int("slices", 5, "time slices written to the table"),
    int("scaling", 1, "run the scaling-invariance check (0 or 1)"),
];

pub const SPIKE_KEYS: &[Key] = &[
    text("example", "mv", "mv | mv-wealth | discount | lq"),
    text("points", "0:1,0.5:2", "comma-separated t:x probe points"),
    text("h", "0.2,0.1,0.05,0.025", "comma-separated window lengths"),
    num("tol", 3.0, "failure threshold in standard errors"),
    int("negative", 1, "also run the zero-control negative check (mv only)"),
    int("negative-paths", 100_000, "Monte Carlo paths for the negative check"),
    int("paths", 40_000, "Monte Carlo paths"),
    int("steps", 200, "Euler steps"),
];

pub const EQUIVALENT_KEYS: &[Key] = &[
    text("example", "mv", "built-in problem (mv)"),
    num("alpha", 0.08, "drift of the risky asset"),
    num("r", 0.03, "short rate"),
    num("sigma", 0.2, "volatility of the risky asset"),
    num("gamma", 2.0, "risk aversion"),
    num("T", 1.0, "horizon"),
    num("x-lo", 0.2, "lower state bound"),
    num("x-hi", 5.0, "upper state bound"),
    num("u-lo", 0.0, "lower control bound"),
    num("u-hi", 2.0, "upper control bound"),
    int("nx", 201, "state nodes"),
    int("nu", 101, "control nodes"),
    int("nt", 0, "time nodes (0 picks the smallest stable count)"),
];

fn sim(s: &Settings) -> SimConfig {
    SimConfig::new(s.usize("paths"), s.usize("steps"), s.int("seed"))
}

fn mv_params(s: &Settings) -> Result<MvParams> {
    Ok(MvParams::new(s.num("alpha"), s.num("r"), s.num("sigma"), s.num("gamma"), s.num("T"))?)
}

fn z_of(est: &JEstimate, reference: f64) -> f64 {
    let err = est.mean - reference;
    if est.std_err > 0.0 {
        err / est.std_err
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn certify_row(t: &mut Table, check: &str, time: f64, x: f64, est: &JEstimate, reference: f64) -> bool {
    let z = z_of(est, reference);
    let ok = z.abs() <= 3.0;
    t.row(row![check, time, x, est.mean, est.std_err, reference, z, ok]);
    ok
}

const CERTIFY_HEADER: &[&str] = &["check", "t", "x", "estimate", "std_err", "reference", "z", "pass"];

fn time_points(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { horizon } else { horizon * i as f64 / n as f64 }).collect()
}

pub fn mv(s: &Settings, out: &Path) -> Result<Summary> {
    let p = mv_params(s)?;
    let sol = solve_mv(&p)?;
    let mut table = Table::new(&["t", "x", "V", "u_hat", "g"]);
    for t in time_points(p.horizon, 20) {
        for x in [0.5, 1.0, 2.0] {
            table.row(row![t, x, sol.value(t, x), sol.u_hat(t, x), sol.g(t, x)]);
        }
    }
    table.write(out, "mv_solution.csv")?;

    let model = p.model(-s.num("u-max"), s.num("u-max"))?;
    let cfg = sim(s);
    let x0 = s.num("x0");
    let mut cert = Table::new(CERTIFY_HEADER);
    let mut summary = Summary::default();
    let est = estimate_j(&model, &sol.law(), &p.reward(), 0.0, x0, &cfg)?;
    let ok = certify_row(&mut cert, "value", 0.0, x0, &est, sol.value(0.0, x0));
    summary.check(
        "value by simulation",
        ok,
        format!("J={:.6} SE={:.2e} closed form {:.6}", est.mean, est.std_err, sol.value(0.0, x0)),
    );
    let mut g_ok = true;
    let h = p.horizon;
    for (t, x) in [(0.0, x0), (0.2 * h, 0.5 * x0), (0.5 * h, 2.0 * x0), (0.7 * h, 1.5 * x0), (0.9 * h, 3.0 * x0)] {
        let sub = SimConfig::new(cfg.n_paths, ((1.0 - t / h) * cfg.n_steps as f64).ceil().max(1.0) as usize, cfg.seed);
        let est = estimate_g(&model, &sol.law(), |y| y, t, x, &sub)?;
        g_ok &= certify_row(&mut cert, "g", t, x, &est, sol.g(t, x));
    }
    summary.check("g martingale", g_ok, "E[X_T] matches g at five points within 3 SE");
    cert.write(out, "mv_certify.csv")?;
    summary.note(format!("u_hat(0,x) = {:.10}, V(0,{x0}) = {:.10}", sol.u_hat(0.0, x0), sol.value(0.0, x0)));
    Ok(summary)
}

pub fn mv_wealth(s: &Settings, out: &Path) -> Result<Summary> {
    let p = mv_params(s)?;
    let n = s.usize("ode-steps");
    let w = solve_mv_wealth(&p, n)?;
    let w2 = solve_mv_wealth(&p, 2 * n)?;
    let mut table = Table::new(&["t", "a", "b", "u_over_x", "V_over_x"]);
    let mut doubling: f64 = 0.0;
    let mut spread: f64 = 0.0;
    for t in time_points(p.horizon, 20) {
        table.row(row![t, w.a(t), w.b(t), w.u_hat(t, 1.0), w.value(t, 1.0)]);
        doubling = doubling.max((w.a(t) - w2.a(t)).abs()).max((w.b(t) - w2.b(t)).abs());
        for x in [0.3, 2.0, 5.0] {
            spread = spread.max((w.u_hat(t, x) / x - w.u_hat(t, 1.0)).abs());
        }
    }
    table.write(out, "mv_wealth_solution.csv")?;
    let mut summary = Summary::default();
    summary.check("step doubling", doubling <= 1e-8, format!("max change {doubling:.2e}"));
    summary.check("control linear in wealth", spread <= 1e-12, format!("u/x spread {spread:.2e}"));
    let x0 = s.num("x0");
    let model = p.model(-s.num("u-max"), s.num("u-max"))?;
    let est = estimate_g(&model, &w.law(), |y| y, 0.0, x0, &sim(s))?;
    let mut cert = Table::new(CERTIFY_HEADER);
    let ok = certify_row(&mut cert, "mean terminal wealth", 0.0, x0, &est, w.a(0.0) * x0);
    cert.write(out, "mv_wealth_certify.csv")?;
    summary.check("mean terminal wealth", ok, format!("E[X_T]={:.6} SE={:.2e} a(0)x={:.6}", est.mean, est.std_err, w.a(0.0) * x0));
    Ok(summary)
}

fn discount_fn(s: &Settings) -> Result<DiscountFn> {
    Ok(match s.text("kind") {
        "exponential" => DiscountFn::exponential(s.num("delta"))?,
        "hyperbolic" => DiscountFn::hyperbolic_power(s.num("k"), s.num("m"))?,
        "quasi-hyperbolic" => DiscountFn::quasi_hyperbolic(s.num("qh-beta"), s.num("delta"))?,
        other => return Err(ConfigError(format!("unknown discount kind '{other}'")).into()),
    })
}

fn log_consumption(s: &Settings) -> Result<LogConsumptionSolution> {
    let disc = discount_fn(s)?;
    Ok(solve_log_consumption(s.num("alpha"), s.num("r"), s.num("sigma"), s.num("T"), &disc, s.usize("ode-steps"))?)
}

pub fn discount(s: &Settings, out: &Path) -> Result<Summary> {
    let sol = log_consumption(s)?;
    let x0 = s.num("x0");
    let mut table = Table::new(&["t", "a", "d", "c_over_x", "u_over_x", "residual"]);
    let mut worst: f64 = 0.0;
    for t in time_points(sol.horizon, 20) {
        let res = hjb_residual_log(&sol, t, x0);
        worst = worst.max(res.abs());
        table.row(row![t, sol.a(t), sol.d(t), sol.c_hat(t, 1.0), sol.u_hat(t, 1.0), res]);
    }
    table.write(out, "discount_solution.csv")?;
    let bound = 10.0 * sol.ode_step();
    let mut summary = Summary::default();
    summary.check("equilibrium residual", worst <= bound, format!("max |residual| {worst:.2e}, bound {bound:.2e}"));
    let model = sol.model(50.0, 50.0 * x0.max(1.0))?;
    let est = estimate_j(&model, &sol.law(), &sol.reward(), 0.0, x0, &sim(s))?;
    let mut cert = Table::new(CERTIFY_HEADER);
    let ok = certify_row(&mut cert, "value", 0.0, x0, &est, sol.value(0.0, x0));
    cert.write(out, "discount_certify.csv")?;
    summary.check(
        "value by simulation",
        ok,
        format!("J={:.6} SE={:.2e} model {:.6}", est.mean, est.std_err, sol.value(0.0, x0)),
    );
    Ok(summary)
}

fn lq_params(s: &Settings) -> Result<LqParams> {
    Ok(LqParams::new(s.num("a"), s.num("b"), s.num("sigma"), s.num("gamma"), s.num("T"))?)
}

pub fn lq(s: &Settings, out: &Path) -> Result<Summary> {
    let p = lq_params(s)?;
    let sol = solve_lq(&p, s.usize("ode-steps"))?;
    let mut header = vec!["t"];
    header.extend(COEFFS);
    let mut table = Table::new(&header);
    for (i, t) in sol.ode.times.iter().enumerate() {
        if i % (sol.ode.times.len() / 20).max(1) == 0 || i + 1 == sol.ode.times.len() {
            let mut r = vec![(*t).into()];
            r.extend(sol.ode.values.row(i).iter().map(|v| (*v).into()));
            table.row(r);
        }
    }
    table.write(out, "lq_solution.csv")?;
    let mut summary = Summary::default();
    let b_exact = sol.ode.values.rows().into_iter().all(|r| r[1] == 0.5 * p.gamma);
    summary.check("B constant", b_exact, "B equals gamma/2 at every node");
    let df = sol.ode.values.rows().into_iter().map(|r| r[3].abs().max(r[4].abs())).fold(0.0, f64::max);
    summary.check("D and F vanish", df <= 1e-10, format!("max {df:.2e}"));
    let ut = [-2.0, 0.5, 3.0].iter().map(|x| sol.u_hat(p.horizon, *x).abs()).fold(0.0, f64::max);
    summary.check("no terminal control", ut <= 1e-10, format!("max |u(T,x)| {ut:.2e}"));
    let rows = lq_value_check(&p, &sol, &[(0.0, 1.0), (0.5 * p.horizon, -0.5)], &sim(s))?;
    let mut cert = Table::new(CERTIFY_HEADER);
    let mut flagged = false;
    let mut ok = true;
    for r in &rows {
        ok &= certify_row(&mut cert, "value", r.t, r.x, &r.estimate, r.model_value);
        flagged |= r.flagged;
    }
    cert.write(out, "lq_certify.csv")?;
    summary.check("value by simulation", ok, "cost within 3 SE at both probes");
    if flagged {
        summary.check("sign flag", false, "simulation and model disagree beyond 5 SE");
    }
    Ok(summary)
}

pub fn cir(s: &Settings, out: &Path) -> Result<Summary> {
    let utility = match s.text("utility") {
        "log" => Utility::Log,
        "power" => Utility::Power { gamma: s.num("gamma") },
        other => return Err(ConfigError(format!("unknown utility '{other}'")).into()),
    };
    let params = CirParams::new(s.num("alpha"), s.num("sigma"), discount_fn(s)?, utility)?;
    let sol = CirSolution::solve(&params)?;
    let rep = certify_sdf(&sol, s.num("T"), s.usize("checkpoints"), &sim(s))?;
    let mut table = Table::new(&["t", "mb_mean", "mb_se", "ms_mean", "ms_se", "ms_max_dev", "ms_tol", "gain_max_dev"]);
    for c in &rep.checkpoints {
        table.row(row![c.t, c.mb_mean, c.mb_se, c.ms_mean, c.ms_se, c.ms_max_dev, c.ms_tol, c.gain_max_dev]);
    }
    table.write(out, "cir_certify.csv")?;
    let mut summary = Summary::default();
    summary.note(format!(
        "short rate {:.10}, kernel {:.10}, a0 {:.10}, consumption rate {:.10}",
        sol.r(),
        sol.phi_kernel(),
        sol.a0(),
        sol.consumption_rate()
    ));
    summary.check("deflated bank account", rep.bank_ok, "mean of M_t B_t constant within 3 SE");
    summary.check(
        "deflated technology",
        rep.technology_ok,
        if rep.log_case { "M_t S_t pathwise constant within the Euler envelope" } else { "mean of M_t S_t constant within 3 SE" },
    );
    if rep.log_case {
        let gain = rep.checkpoints.iter().map(|c| c.gain_max_dev).fold(0.0, f64::max);
        summary.check("deflated consumption gain", rep.gain_ok, format!("max deviation {gain:.2e}, bound {:.1e}", rep.gain_tol));
    }
    Ok(summary)
}

fn mv_example_grid(s: &Settings) -> Result<(MvParams, tic_core::grid::ExtendedProblem, GridSpec)> {
    if s.text("example") != "mv" {
        return Err(ConfigError(format!("unknown grid example '{}'", s.text("example"))).into());
    }
    let p = mv_params(s)?;
    let prob = p.extended_problem(s.num("u-lo"), s.num("u-hi"))?;
    let (lo, hi, nx, nu) = (s.num("x-lo"), s.num("x-hi"), s.usize("nx"), s.usize("nu"));
    let grid = match s.usize("nt") {
        0 => GridSpec::with_cfl_nt(lo, hi, nx, nu, &prob.model)?,
        nt => GridSpec::new(lo, hi, nx, nt, nu),
    };
    Ok((p, prob, grid))
}

pub fn grid(s: &Settings, out: &Path) -> Result<Summary> {
    let (p, prob, g) = mv_example_grid(s)?;
    let sol = solve_extended(&prob, &g)?;
    let cf = solve_mv(&p)?;
    let mut table = Table::new(&["t", "x", "V", "u_hat", "g", "V_closed", "u_closed", "g_closed"]);
    let slices = s.usize("slices").max(2);
    let mut levels: Vec<usize> = (0..slices).map(|k| k * (g.nt - 1) / (slices - 1)).collect();
    levels.dedup();
    for n in levels {
        let t = sol.times[n];
        for (i, &x) in sol.xs.iter().enumerate() {
            table.row(row![t, x, sol.v[[n, i]], sol.u_hat[[n, i]], sol.g[[n, i]], cf.value(t, x), cf.u_hat(t, x), cf.g(t, x)]);
        }
    }
    table.write(out, "grid_solution.csv")?;

    let d = sol.diagnostics;
    let mut summary = Summary::default();
    summary.note(format!(
        "grid nx={} nt={} nu={} dx={:.6} dt={:.6}; CFL margin {:.4}; boundary width {} nodes; scheme tolerance {:.4e}",
        g.nx, g.nt, g.nu, d.dx, d.dt, d.cfl_margin, d.boundary_width, d.scheme_tol
    ));
    let v = sol.value_at(0.0, 1.0);
    let rel = (v / cf.value(0.0, 1.0) - 1.0).abs();
    summary.check("value vs closed form", rel <= 0.01, format!("V(0,1)={v:.6} closed form {:.6}", cf.value(0.0, 1.0)));
    let du = sol.controls[1] - sol.controls[0];
    let tol = (0.02 * cf.u_hat(0.0, 1.0)).max(du);
    let dev = g.interior_half().map(|i| (sol.u_hat[[0, i]] - cf.u_hat(0.0, sol.xs[i])).abs()).fold(0.0, f64::max);
    summary.check("control vs closed form", dev <= tol, format!("max deviation {dev:.4} on the interior half, tolerance {tol:.4}"));
    summary.check(
        "diagonal identity",
        d.diagonal_gap <= 5.0 * d.scheme_tol,
        format!("max |V - f(t,x,x) - G| {:.2e}", d.diagonal_gap),
    );
    let simp = solve_simplified(&p.simplified_problem(s.num("u-lo"), s.num("u-hi"))?, &g)?;
    let gap = g.interior_half().map(|i| (simp.v[[0, i]] - sol.v[[0, i]]).abs()).fold(0.0, f64::max);
    summary.check("simplified solver agreement", gap <= 2.0 * d.scheme_tol, format!("max gap {gap:.2e}"));
    if s.int("scaling") != 0 {
        let runs = [
            ("2", scaling_check(&prob, |_| 2.0, &g)?),
            ("x", scaling_check(&prob, |x| x, &g)?),
            ("exp(0.1x)", scaling_check(&prob, |x: f64| (0.1 * x).exp(), &g)?),
        ];
        for (name, r) in runs {
            summary.check(
                &format!("scaling by {name}"),
                r.argmax_agreement >= 0.99 && r.max_ratio_dev <= 0.01,
                format!("argmax agreement {:.2}%, ratio deviation {:.2e}", 100.0 * r.argmax_agreement, r.max_ratio_dev),
            );
        }
    }
    Ok(summary)
}

pub fn equivalent(s: &Settings, out: &Path) -> Result<Summary> {
    let (p, prob, g) = mv_example_grid(s)?;
    let sol = solve_extended(&prob, &g)?;
    let eq = build_equivalent_standard(&prob, &sol)?;
    let kernel = equivalent_standard_objective(&p);
    let mut table = Table::new(&["t", "x", "u", "K", "K_closed"]);
    let mut sup: f64 = 0.0;
    let mut dev: f64 = 0.0;
    let t_stride = (g.nt / 10).max(1);
    let x_stride = (g.nx / 20).max(1);
    for n in (0..g.nt).step_by(t_stride) {
        for i in g.interior_half().step_by(x_stride) {
            for (a, &u) in sol.controls.iter().enumerate() {
                let want = kernel(sol.times[n], u);
                sup = sup.max(want.abs());
                dev = dev.max((eq.k[[n, i, a]] - want).abs());
                table.row(row![sol.times[n], sol.xs[i], u, eq.k[[n, i, a]], want]);
            }
        }
    }
    table.write(out, "equivalent.csv")?;
    let mut summary = Summary::default();
    summary.check("DP over K reproduces V", eq.max_rel_gap <= 0.01, format!("max relative gap {:.2e} on the interior", eq.max_rel_gap));
    summary.check("kernel vs closed form", dev <= 0.05 * sup, format!("max deviation {dev:.3e} of kernel range {sup:.3e}"));
    Ok(summary)
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| ConfigError(format!("bad {what} entry '{p}'")).into()))
        .collect()
}

fn parse_points(raw: &str) -> Result<Vec<(f64, f64)>> {
    raw.split(',')
        .map(|p| {
            let mut it = p.split(':');
            match (it.next().map(str::trim), it.next().map(str::trim), it.next()) {
                (Some(t), Some(x), None) => match (t.parse(), x.parse()) {
                    (Ok(t), Ok(x)) => Ok((t, x)),
                    _ => Err(ConfigError(format!("bad point '{p}', expected t:x")).into()),
                },
                _ => Err(ConfigError(format!("bad point '{p}', expected t:x")).into()),
            }
        })
        .collect()
}

fn three_ways(law: &FeedbackLaw) -> Vec<Perturbation> {
    vec![
        Perturbation::new("plus one", law.offset([1.0, 0.0])),
        Perturbation::new("minus one", law.offset([-1.0, 0.0])),
        Perturbation::new("doubled", law.scale([2.0, 1.0])),
    ]
}

pub fn spike(s: &Settings, out: &Path) -> Result<Summary> {
    let points = parse_points(s.text("points"))?;
    let hs = parse_list(s.text("h"), "window")?;
    let tol = s.num("tol");
    let cfg = sim(s);
    let example = s.text("example");
    let (model, law, perturb, spec): (ControlModel, FeedbackLaw, Vec<Perturbation>, RewardSpec) = match example {
        "mv" => {
            let p = MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0)?;
            let law = solve_mv(&p)?.law();
            (p.model(-50.0, 50.0)?, law.clone(), three_ways(&law), p.reward())
        }
        "mv-wealth" => {
            let p = MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0)?;
            let law = solve_mv_wealth(&p, 2000)?.law();
            (p.model(-50.0, 50.0)?, law.clone(), three_ways(&law), p.wealth_reward())
        }
        "discount" => {
            let sol = solve_log_consumption(0.08, 0.03, 0.2, 1.0, &DiscountFn::hyperbolic(1.0)?, 400)?;
            let law = sol.law();
            let perturb = vec![
                Perturbation::new("more risk", law.offset([0.5, 0.0])),
                Perturbation::new("double consumption", law.scale([1.0, 2.0])),
                Perturbation::new("half consumption", law.scale([1.0, 0.5])),
            ];
            (sol.model(50.0, 50.0)?, law, perturb, sol.reward())
        }
        "lq" => {
            let p = LqParams::new(0.4, 0.7, 0.3, 2.0, 1.0)?;
            let law = solve_lq(&p, 2000)?.law();
            (p.model()?, law.clone(), three_ways(&law), p.reward())
        }
        other => return Err(ConfigError(format!("unknown spike example '{other}'")).into()),
    };
    let reps = check_equilibrium(&model, &law, &perturb, &spec, &points, &hs, &cfg, tol)?;
    let mut table = Table::new(&["candidate", "t", "x", "perturbation", "h", "delta", "std_err", "z", "verdict"]);
    let mut summary = Summary::default();
    let write = |table: &mut Table, who: &str, reps: &[tic_core::equilibrium::SpikeReport]| {
        for r in reps {
            for k in 0..r.h_values.len() {
                let z = if r.std_errs[k] > 0.0 { r.deltas[k] / r.std_errs[k] } else { 0.0 };
                table.row(row![who, r.t, r.x, r.perturbation.as_str(), r.h_values[k], r.deltas[k], r.std_errs[k], z, r.verdict.to_string()]);
            }
        }
    };
    write(&mut table, "equilibrium", &reps);
    for r in &reps {
        summary.check(
            &format!("spike {} at ({}, {})", r.perturbation, r.t, r.x),
            r.verdict != Verdict::Fail,
            format!("verdict {}", r.verdict),
        );
    }
    if example == "mv" && s.int("negative") != 0 {
        let p = MvParams::new(0.08, 0.03, 0.2, 2.0, 1.0)?;
        let neg = check_equilibrium(
            &model,
            &FeedbackLaw::constant([0.0, 0.0]),
            &[Perturbation::new("closed form", law.clone())],
            &p.reward(),
            &points[..1],
            &hs,
            &SimConfig::new(s.usize("negative-paths"), cfg.n_steps, cfg.seed),
            tol,
        )?;
        write(&mut table, "zero", &neg);
        summary.check("zero control is rejected", neg[0].verdict == Verdict::Fail, format!("verdict {}", neg[0].verdict));
    }
    table.write(out, "spike.csv")?;
    Ok(summary)
}
