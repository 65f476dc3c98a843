//! Command-line front end: validate, method of moments, fit, estimate,
//! simulate, gradient check and diagnostics.

mod commands;
pub mod config;
mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{sha256_file, Manifest};

/// Error carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or data: exit 1.
    Usage(String),
    Core(netstrat::Error),
    Io(String, std::io::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, e: std::io::Error) -> Self {
        CliError::Io(context.into(), e)
    }

    pub fn exit_code(&self) -> i32 {
        use netstrat::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(..) => 3,
            CliError::Core(e) => match e {
                E::Sampler(_) => 2,
                E::Io { .. } => 3,
                E::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(c, e) => write!(f, "{c}: {e}"),
        }
    }
}

impl From<netstrat::Error> for CliError {
    fn from(e: netstrat::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "netstrat",
    version,
    about = "Principal stratification with a network mediator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Study input files.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Class file (class_id, z).
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Student file (student_id, class_id, m, y, covariates...).
    #[arg(long)]
    pub students: Option<PathBuf>,
    /// Friendship edge file (student_id_a, student_id_b).
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random component; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "NETSTRAT_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimandArgs {
    /// Mediator grid for controlled effects, e.g. `0,0.1,0.2`.
    #[arg(long = "s-grid", value_parser = config::parse_grid)]
    pub s_grid: Option<std::vec::Vec<f64>>,
    /// Contrasts `z:z'`, e.g. `2:1,3:2`.
    #[arg(long, value_parser = config::parse_contrasts)]
    pub contrasts: Option<std::vec::Vec<(u8, u8)>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the input files and summarize the design.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Method-of-moments stratum proportions.
    Mom {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample the posterior and write draws.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Compute causal estimands from posterior draws.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        estimands: EstimandArgs,
        /// Draws file written by `fit`; defaults to `<out>/draws.csv`.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Generate a synthetic study with known truth.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare the analytic gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Convergence diagnostics for a draws file.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        draws: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
