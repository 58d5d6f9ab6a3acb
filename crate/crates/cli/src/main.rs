//! `tic-solve`: runs the solvers on built-in problems, certifies them by
//! simulation and writes CSV tables plus a pass/fail summary.
//!
//! Exit status is 0 when every exercised check passes, 1 when a check fails
//! or a computation breaks down, and 2 on a configuration error.

mod output;
mod runs;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::Command;

use output::Summary;
use settings::{ConfigError, Key, Settings};

type Pipeline = fn(&Settings, &Path) -> Result<Summary>;

const SUBCOMMANDS: &[(&str, &str, &[Key], Pipeline)] = &[
    ("mv", "mean-variance closed form and its simulation check", runs::MV_KEYS, runs::mv),
    ("mv-wealth", "mean-variance with wealth-dependent risk aversion", runs::WEALTH_KEYS, runs::mv_wealth),
    ("discount", "log consumption under non-exponential discounting", runs::DISCOUNT_KEYS, runs::discount),
    ("lq", "linear-quadratic regulator", runs::LQ_KEYS, runs::lq),
    ("cir", "production economy: short rate, kernel and deflator checks", runs::CIR_KEYS, runs::cir),
    ("grid", "finite-difference solve of a built-in problem", runs::GRID_KEYS, runs::grid),
    ("spike", "spike-perturbation equilibrium test", runs::SPIKE_KEYS, runs::spike),
    ("equivalent", "equivalent standard problem built from a grid solve", runs::EQUIVALENT_KEYS, runs::equivalent),
];

fn cli() -> Command {
    let mut cmd = Command::new("tic-solve")
        .about("Equilibrium solvers for time-inconsistent control problems")
        .subcommand_required(true);
    for (name, about, keys, _) in SUBCOMMANDS {
        cmd = cmd.subcommand(settings::subcommand(name, about, keys));
    }
    cmd
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("TIC_SOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("TIC_SOLVE_THREADS must be a non-negative integer, got '{raw}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some() || matches!(e.downcast_ref::<tic_core::Error>(), Some(tic_core::Error::Domain(_)))
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let (_, _, keys, run) = SUBCOMMANDS.iter().find(|s| s.0 == name).expect("registered subcommand");
    let settings = match Settings::resolve(keys, sub) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = PathBuf::from(settings.text("out"));
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create output directory {}: {e}", out.display());
        return ExitCode::from(2);
    }
    match run(&settings, &out) {
        Ok(summary) => {
            if let Err(e) = summary.write(&out) {
                eprintln!("error: {}", one_line(&e));
                return ExitCode::from(1);
            }
            if summary.failed().is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", summary.failed().join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
