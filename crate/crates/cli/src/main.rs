//! `grudw`: synthetic cohorts, training, evaluation, recalibration and
//! trajectory export for the GRU-D Weibull survival engine.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (including training divergence).

mod checkpoint;
mod config;
mod error;
mod eval;
mod export;
mod io;
mod recalibrate;
mod report;
mod synth;
mod train;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "grudw", version, about = "GRU-D Weibull time-to-event modelling")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record wall-clock timings (training logs become run-dependent).
    #[arg(long, global = true)]
    timing: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its truth sidecar.
    Synth(synth::SynthArgs),
    /// Train one fold model.
    Train(train::TrainArgs),
    /// Evaluate checkpoints on a cohort split.
    Eval(eval::EvalArgs),
    /// Fit a linear recalibration on cross-validation bins and apply it.
    Recalibrate(recalibrate::RecalibrateArgs),
    /// Export per-step trajectories for selected patients.
    ExportTrajectory(export::ExportArgs),
    /// Flatten an evaluation report into plot-ready tables.
    Report(report::ReportArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let started = Instant::now();
    let out = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a, cli.timing),
        Command::Eval(a) => eval::run(a),
        Command::Recalibrate(a) => recalibrate::run(a),
        Command::ExportTrajectory(a) => export::run(a),
        Command::Report(a) => report::run(a),
    };
    if cli.timing {
        eprintln!("elapsed: {:.3}s", started.elapsed().as_secs_f64());
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grudw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
