//! `splitquant`: calibrate, solve offline patterns, serve requests and run sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "splitquant", version, about = "Accuracy-aware split-inference planner and simulator")]
struct Cli {
    /// JSON file overriding default settings field by field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    paths: PathArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Model directory (manifest.json plus weight files).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Dataset root containing train/, val/ and test/.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    #[arg(long, global = true)]
    patterns: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure noise coefficients and robustness; writes profile.json.
    Calibrate,
    /// Solve one pattern per (accuracy level, partition point); writes patterns.json.
    Offline,
    /// Pick a pattern for one request and write the quantized device segment.
    Serve(ServeArgs),
    /// Sweep partition points for each strategy and write CSVs.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Largest tolerated accuracy drop (fraction).
    #[arg(long)]
    accuracy: f64,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long = "f-local")]
    f_local: Option<f64>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long = "gamma-local")]
    gamma_local: Option<f64>,
    /// Memory budget for the device's quantized weights, in bits.
    #[arg(long = "mem-budget")]
    mem_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Accuracy level whose patterns the optimized strategy uses.
    #[arg(long)]
    accuracy: Option<f64>,
    /// Comma-separated subset of optimized, no_optimization, magnitude_pruning.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long = "p-min")]
    p_min: Option<usize>,
    #[arg(long = "p-max")]
    p_max: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Infeasible(m) => m,
        }
    }
}

impl From<splitquant::Error> for CliError {
    fn from(e: splitquant::Error) -> Self {
        use splitquant::Error as E;
        match e {
            E::Infeasible(_) => CliError::Infeasible(e.to_string()),
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("ERROR: {first}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR: {}", e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}

impl CliError {
    pub fn message_owned(&self) -> String {
        self.message().to_string()
    }
}
