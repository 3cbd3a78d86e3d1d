//! Command-line experiment runner for `bbmtraps`.
//!
//! Every subcommand maps library errors to fixed exit codes and reports them
//! as a JSON object on stderr.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "bbmtraps", version, about = "Branching Brownian motion among Poissonian traps")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "BBMTRAPS_JOBS", default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the variational problem for the annealed survival rate.
    Rate(RateArgs),
    /// Evaluate the ball integral g_d(r, b).
    Gd(GdArgs),
    /// Critical intensity of a radially decaying field.
    Lcr(LcrArgs),
    /// Simulate one tree (and trap field) and dump it.
    Simulate(RunArgs),
    /// Run the Monte Carlo estimators listed in the config.
    Estimate(RunArgs),
}

/// Model parameters, from flags or from the offspring law and trap field of a config.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    /// Skeleton factor α = 1 - f'(q) (defaults to 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Intensity of the radial field l/|x|^(d-1).
    #[arg(long)]
    pub l: Option<f64>,
    /// Also report the small-ball bound for this ε.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Solve at each listed intensity and print a CSV phase diagram instead.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sweep: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct GdArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LcrArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat capped trees and low acceptance as errors.
    #[arg(long)]
    pub strict: bool,
    /// Write tree, trajectory and trap CSVs (simulate only).
    #[arg(long)]
    pub dump: bool,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.kind, "message": self.message, "exit_code": self.code}).to_string()
    }
}

impl From<bbmtraps::Error> for Failure {
    fn from(e: bbmtraps::Error) -> Self {
        use bbmtraps::Error as E;
        let (code, kind) = match &e {
            E::Convergence(_) => (EXIT_CONVERGENCE, "convergence"),
            E::Capacity { .. } => (EXIT_CAPACITY, "capacity"),
            E::Truncation { .. } => (EXIT_CAPACITY, "truncation"),
            E::Acceptance { .. } => (EXIT_ACCEPTANCE, "acceptance"),
            E::Window { .. } => (EXIT_CONFIG, "window"),
            E::InvalidLaw(_) | E::Subcritical { .. } => (EXIT_CONFIG, "invalid_law"),
            E::Domain(_) => (EXIT_CONFIG, "domain"),
            E::Config(_) => (EXIT_CONFIG, "config"),
        };
        Failure::new(code, kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_IO, "io", e.to_string())
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!("{}", Failure::new(EXIT_CONFIG, "usage", e.to_string().trim()).to_json());
            return EXIT_CONFIG;
        }
    };
    let jobs = cli.jobs;
    match bbmtraps::parallel::with_workers(jobs, move || commands::dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.code
        }
    }
}
