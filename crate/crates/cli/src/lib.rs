//! Command-line driver: simulations, analytic reports, parameter sweeps and
//! a cross-check of the forward, backward and analytic layers.

mod commands;
pub mod output;

use clap::{Args, Parser, Subcommand};
use infector_core::Error;
use std::path::PathBuf;
use thiserror::Error as ThisError;

pub use commands::{parse_values, run_sweep, run_verify, Check, Grid, Manifest, SweepRow, VerdictReport, AUTO_W_HORIZON};

#[derive(Debug, Clone, ThisError)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{failed} of {total} checks failed")]
    Verdict { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verdict { .. } => 1,
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => CliError::Config(e.to_string()),
            Error::Subcritical { r0 } => CliError::Config(format!("R0 = {r0} is not above 1; the model must be supercritical")),
            Error::Io(m) => CliError::Io(m),
            Error::Domain(_) => CliError::Usage(e.to_string()),
            Error::NonConvergence { .. } | Error::Capped { .. } | Error::NoData(_) | Error::OutOfHorizon { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "infector", version, about = "Who infected whom in multi-type epidemics")]
pub struct Cli {
    /// Worker threads for replicate pools (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    /// Directory for CSV files; tables go to stdout when omitted.
    #[arg(long, short = 'o', alias = "output")]
    pub output_dir: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
    /// Leave the generation time out of the header.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Eager,
    Lazy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward replicates and attribution fractions.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = infector_core::forward::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Master seed; defaults to the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = MethodArg::Eager)]
        method: MethodArg,
        /// Keep going until this many large outbreaks are collected.
        #[arg(long)]
        min_large: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Susceptibility set of one vertex on one sampled graph.
    Backward {
        #[arg(long)]
        config: PathBuf,
        /// Root vertex (0-based).
        #[arg(long)]
        vertex: u32,
        /// Exploration horizon, or `auto` for (1-κ)/4 · ln n / α.
        #[arg(long, default_value = "auto")]
        horizon: String,
        #[arg(long, default_value_t = infector_core::backward::DEFAULT_KAPPA)]
        kappa: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Attribution fractions from the backward branching process.
    BpEstimate {
        #[arg(long)]
        config: PathBuf,
        /// Infected type (1-based).
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 10_000)]
        replicates: usize,
        /// Horizon for W, or `auto` for 9/α.
        #[arg(long, default_value = "auto")]
        horizon: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fixed points and attribution bounds of the two-type marked model.
    Bounds {
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        m1: f64,
        #[arg(long)]
        m2: f64,
        /// Evaluate the upper bound without the leading `1 -`.
        #[arg(long)]
        as_printed: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Cross-checks forward, backward and analytic results for a config.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Large outbreaks to collect.
        #[arg(long, default_value_t = 200)]
        replicates: usize,
        #[arg(long, default_value_t = 2000)]
        bp_replicates: usize,
        /// Horizon for W, or `auto` for 9/α.
        #[arg(long, default_value = "auto")]
        bp_horizon: String,
        #[arg(long, default_value_t = infector_core::forward::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Bounds over a parameter grid; values are comma lists or start:stop:step.
    Sweep {
        #[arg(long)]
        p1: String,
        #[arg(long)]
        m1: String,
        #[arg(long)]
        m2: String,
        #[arg(long)]
        as_printed: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("infector: {e}");
            e.exit_code()
        }
    }
}
