//! Batch pipeline: ingest a book-value panel, estimate, filter, smooth,
//! forecast, price and compute default probabilities, writing one JSON
//! report per run.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Valuation;
use crate::config::{FileConfig, Overrides, Settings};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "privrisk",
    version,
    about = "Structural credit risk for companies without traded equity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel from known parameters (CSV plus truth file).
    Simulate(RunArgs),
    /// Fit the parameters by EM.
    Estimate(RunArgs),
    /// Filtered multipliers and market values.
    Filter(RunArgs),
    /// Smoothed multipliers and market values.
    Smooth(RunArgs),
    /// Forecast multipliers and book growth past the sample.
    Forecast(RunArgs),
    /// Equity and debt values as call and put on the asset value.
    Price(RunArgs),
    /// Default probability at a supplied or calibrated threshold.
    #[command(name = "default-prob")]
    DefaultProb(RunArgs),
    /// Threshold that reproduces the filtered equity value.
    #[command(name = "calibrate-threshold")]
    CalibrateThreshold(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// Compare closed forms with Monte Carlo estimates.
    Mc,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Book-value panel CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report (or simulated CSV) path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo path count.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Periods from the last observation to maturity.
    #[arg(long)]
    pub maturity: Option<usize>,
    /// Nominal debt / strike.
    #[arg(long)]
    pub strike: Option<f64>,
    /// Default threshold (calibrated when absent).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Per-period log risk-free rate.
    #[arg(long, allow_negative_numbers = true)]
    pub rate: Option<f64>,
    #[arg(long, value_enum)]
    pub check: Option<Check>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// JSON file with parameters (a report or truth file also works).
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl RunArgs {
    pub fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Settings::resolve(
            file,
            Overrides {
                input: self.input.clone(),
                output: self.output.clone(),
                seed: self.seed,
                paths: self.paths,
                maturity: self.maturity,
                strike: self.strike,
                threshold: self.threshold,
                rate: self.rate,
                max_iter: self.max_iter,
                tol: self.tol,
                check_mc: self.check == Some(Check::Mc),
                params_file: self.params.clone(),
            },
        )
    }
}

/// Runs one command, writes its files and returns the deferred failure,
/// if any.
pub fn run(command: &Command) -> Result<()> {
    let (args, f): (&RunArgs, fn(&Settings) -> Result<commands::Outcome>) = match command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::Estimate(a) => (a, commands::estimate),
        Command::Filter(a) => (a, commands::filter),
        Command::Smooth(a) => (a, commands::smooth_cmd),
        Command::Forecast(a) => (a, commands::forecast_cmd),
        Command::Price(a) => (a, |s| commands::valuation(s, Valuation::Price)),
        Command::DefaultProb(a) => (a, |s| commands::valuation(s, Valuation::DefaultProbability)),
        Command::CalibrateThreshold(a) => (a, |s| commands::valuation(s, Valuation::CalibrateThreshold)),
    };
    let settings = args.settings()?;
    let outcome = f(&settings)?;
    for (path, contents) in &outcome.files {
        output::emit(path.as_deref(), contents)?;
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Maps a run result to the process exit status, reporting failures on stderr.
pub fn exit_status(result: &std::result::Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
