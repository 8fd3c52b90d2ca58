//! `gridforge`: synthesize, certify and simulate plug-and-play DC microgrid controllers.
//!
//! Exit codes: 0 success, 2 a negative verdict (denied DGU, failed certificate,
//! diverged run, mismatching reference spectra), 1 any error.

mod bundle;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridforge::scenario::LineModel;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gridforge", version, about = "Plug-and-play voltage control for DC microgrids")]
struct Cli {
    /// Seed for the randomly sampled sweep points; every other command is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a controller for every DGU in a scenario, including plug-in newcomers.
    Synth {
        scenario: PathBuf,
        #[arg(long)]
        sigma_bar: Option<f64>,
        /// Bundle file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check global stability of a controller bundle on a scenario's initial grid.
    Certify {
        scenario: PathBuf,
        controllers: PathBuf,
        /// Network-wide σ̄ to check against; defaults to the bundle's.
        #[arg(long)]
        sigma_bar: Option<f64>,
        /// Certificate file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a scenario's timeline and write `trajectory.csv` and `events.jsonl`.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Use these controllers for the initial DGUs instead of synthesizing them.
        #[arg(long)]
        controllers: Option<PathBuf>,
    },
    /// Reproduce the LQR and pole-placement comparison on the two-DGU grid.
    AppendixA {
        /// Directory for the report, both gain bundles and the two-DGU scenario.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feasibility map over converter filter parameters.
    Sweep {
        #[arg(long, default_value_t = 10.0)]
        sigma_bar: f64,
        /// `min:max:points` in Ω.
        #[arg(long, value_parser = parse_axis)]
        r_t: Option<gridforge::sweep::Axis>,
        /// `min:max:points` in H.
        #[arg(long, value_parser = parse_axis)]
        l_t: Option<gridforge::sweep::Axis>,
        /// `min:max:points` in F.
        #[arg(long, value_parser = parse_axis)]
        c_t: Option<gridforge::sweep::Axis>,
        /// Draw this many uniform random points from the box instead of the grid.
        #[arg(long)]
        samples: Option<usize>,
        /// Directory for `sweep.csv` and `summary.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    sigma_bar: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_enum)]
    line_model: Option<LineModelArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LineModelArg {
    Qsl,
    Rl,
}

impl From<LineModelArg> for LineModel {
    fn from(m: LineModelArg) -> Self {
        match m {
            LineModelArg::Qsl => LineModel::Qsl,
            LineModelArg::Rl => LineModel::Rl,
        }
    }
}

fn parse_axis(text: &str) -> Result<gridforge::sweep::Axis, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [min, max, points] = parts[..] else {
        return Err("expected min:max:points".into());
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    let points = points.parse::<usize>().map_err(|e| format!("{points}: {e}"))?;
    Ok(gridforge::sweep::Axis::new(num(min)?, num(max)?, points))
}

/// Whether a command that ran to completion reached a positive result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Positive,
    Negative,
}

fn run(cli: Cli) -> Result<Verdict, CliError> {
    match cli.command {
        Command::Synth { scenario, sigma_bar, out } => commands::synth(&scenario, sigma_bar, out.as_deref()),
        Command::Certify { scenario, controllers, sigma_bar, out } => {
            commands::certify(&scenario, &controllers, sigma_bar, out.as_deref())
        }
        Command::Simulate { scenario, out, overrides, controllers } => commands::simulate(
            &scenario,
            &out,
            commands::ScenarioOverrides {
                sigma_bar: overrides.sigma_bar,
                dt: overrides.dt,
                line_model: overrides.line_model.map(Into::into),
            },
            controllers.as_deref(),
        ),
        Command::AppendixA { out } => commands::appendix_a(out.as_deref()),
        Command::Sweep { sigma_bar, r_t, l_t, c_t, samples, out } => {
            let green = gridforge::sweep::GREEN_BOX;
            let grid = gridforge::sweep::SweepGrid {
                r_t: r_t.unwrap_or(green.r_t),
                l_t: l_t.unwrap_or(green.l_t),
                c_t: c_t.unwrap_or(green.c_t),
            };
            commands::sweep(&grid, sigma_bar, samples.map(|n| (n, cli.seed)), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Verdict::Positive) => ExitCode::SUCCESS,
        Ok(Verdict::Negative) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
