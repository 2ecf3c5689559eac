//! Command-line entry points: `run`, `parse-policy` and `report`.
//!
//! Exit codes: 0 on success, 2 for bad input (config, policy text, unreadable
//! report directory), 1 for failures during a run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, SimConfig};
use crate::metrics::{jain_index, read_summary, read_timeseries, steady_state_from_rows, MetricsError};
use crate::policy::{parse_policy, render_policy, validate_policy};
use crate::sim::{SimError, Simulation};
use crate::AppId;

#[derive(Debug, Parser)]
#[command(name = "sdqos", about = "Software-defined QoS simulator for HPC storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a configuration and write timeseries.csv and summary.json.
    Run(RunArgs),
    /// Parse a policy statement and print its canonical form.
    ParsePolicy {
        statement: String,
    },
    /// Re-aggregate a previous run's output directory.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Simulated seconds.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Overrides the config's seed (which defaults to 42).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub disable_borrowing: bool,
}

/// Applies command-line overrides to a loaded config.
pub fn apply_run_flags(config: &mut SimConfig, args: &RunArgs) {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.disable_borrowing {
        config.borrowing_enabled = false;
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    main_with_io(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn main_with_io<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(&args, out, err),
        Command::ParsePolicy { statement } => cmd_parse_policy(&statement, out, err),
        Command::Report { input } => cmd_report(&input, out, err),
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", args.config.display());
            return 2;
        }
    };
    apply_run_flags(&mut config, args);
    let sim = match Simulation::new(config, args.duration) {
        Ok(sim) => sim,
        Err(e @ (SimError::Config(_) | SimError::Policy(_) | SimError::Duration(_))) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let (report, sim) = match sim.run() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: simulation failed: {e}");
            return 1;
        }
    };
    if let Err(e) = sim.metrics().export(&report, &args.out) {
        let _ = writeln!(err, "error: writing {}: {e}", args.out.display());
        return 1;
    }
    for (app, a) in &report.apps {
        let _ = writeln!(
            out,
            "{app}: desired {:.1} MB/s, achieved {:.1} MB/s, satisfaction {:.3}",
            a.desired_mbps, a.achieved_mbps, a.satisfaction
        );
    }
    0
}

pub fn cmd_parse_policy(statement: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match parse_policy(statement) {
        Ok(stmt) => {
            let violations = validate_policy(&stmt);
            if violations.is_empty() {
                let _ = writeln!(out, "{}", render_policy(&stmt));
                0
            } else {
                for v in violations {
                    let _ = writeln!(err, "error: {v}");
                }
                2
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let _ = writeln!(err, "  {statement}");
            let _ = writeln!(err, "  {}^", " ".repeat(e.position()));
            2
        }
    }
}

/// Per-app figures re-derived from an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: BTreeMap<AppId, ReportRow>,
    pub fairness_jain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub desired_mbps: f64,
    pub achieved_mbps: f64,
    pub satisfaction: f64,
}

/// Re-aggregates `timeseries.csv`; desired rates, run timing and the idle
/// status of apps that received nothing come from `summary.json`.
pub fn build_report(dir: &Path) -> Result<ReportTable, MetricsError> {
    let summary = read_summary(dir)?;
    let rows = read_timeseries(dir)?;
    let achieved = steady_state_from_rows(&rows, &summary.run);
    let mut out = BTreeMap::new();
    for (app, s) in &summary.apps {
        let got = achieved.get(app).copied().unwrap_or(0.0);
        let satisfaction = if got > 0.0 {
            (got / s.desired_mbps).clamp(0.0, 1.0)
        } else {
            s.satisfaction
        };
        out.insert(
            app.clone(),
            ReportRow {
                desired_mbps: s.desired_mbps,
                achieved_mbps: got,
                satisfaction,
            },
        );
    }
    let sats: Vec<f64> = out.values().map(|r| r.satisfaction).collect();
    Ok(ReportTable {
        fairness_jain: jain_index(&sats).ok(),
        rows: out,
    })
}

pub fn cmd_report(dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let table = match build_report(dir) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read run output in {}: {e}", dir.display());
            return 2;
        }
    };
    let _ = writeln!(out, "{:<16} {:>16} {:>16} {:>14}", "app", "desired_mbps", "achieved_mbps", "satisfaction");
    for (app, r) in &table.rows {
        let _ = writeln!(
            out,
            "{:<16} {:>16.9} {:>16.9} {:>14.9}",
            app.as_str(),
            r.desired_mbps,
            r.achieved_mbps,
            r.satisfaction
        );
    }
    match table.fairness_jain {
        Some(j) => {
            let _ = writeln!(out, "jain_index {j:.9}");
        }
        None => {
            let _ = writeln!(out, "jain_index n/a");
        }
    }
    0
}
