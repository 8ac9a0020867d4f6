//! Command-line front end: argument parsing, configuration merging and
//! CSV output for every experiment in `whittaker-ldp`.
//!
//! Exit codes: 0 on success, 1 for invalid input, 2 for runtime failures.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] whittaker_ldp::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use whittaker_ldp::Error as E;
        match self {
            Self::Usage(_) | Self::Csv(_) => 1,
            Self::Core(e) => match e {
                E::InvalidGrid(_)
                | E::InvalidIndex { .. }
                | E::ShapeMismatch(_)
                | E::NonFiniteInput(_)
                | E::InvalidParameter(_)
                | E::Domain { .. }
                | E::EmptySample
                | E::Csv(_)
                | E::Format(_) => 1,
                E::NonFinite { .. } | E::Infeasible(_) | E::DegenerateFit { .. } | E::Io(_) => 2,
            },
            Self::Io(_) => 2,
        }
    }
}

// Both crates share the workspace version.
const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nlibrary: whittaker-ldp ",
    env!("CARGO_PKG_VERSION"),
    "\nthreads: --threads, else WHITTAKER_THREADS, else all cores"
);

#[derive(Debug, Parser)]
#[command(name = "whittaker", version, long_version = LONG_VERSION)]
#[command(about = "Simulate the scaled Whittaker growth model and test its large deviations")]
pub struct Cli {
    /// JSON experiment configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; falls back to WHITTAKER_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one replicate of the particle triangle and write its paths.
    Simulate(SimulateArgs),
    /// Per-particle rate breakdown of a bundle CSV.
    Rate(RateArgs),
    /// Reflect a driver off a barrier (CSV with columns t,driver,barrier).
    Reflect(ReflectArgs),
    /// Small-ball probabilities across gamma and the fitted decay slope.
    Slope(SlopeArgs),
    /// Violation frequencies of the interlacing events across gamma.
    Interlace(InterlaceArgs),
    /// Coupled one-barrier versus two-barrier particle gaps.
    Equivalence(EquivalenceArgs),
    /// Most likely bundle between two configurations.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicate: Option<u64>,
    /// tamed-euler, exact-edge or reflected.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub drift_cap: Option<f64>,
    /// Initial configuration CSV (first row is used).
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub bundle: Option<String>,
    /// Initial configuration CSV; defaults to the bundle's first row.
    #[arg(long)]
    pub init: Option<String>,
    /// Coincidence tolerance; defaults to 2 sqrt(dt / gamma).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// lemma or theorem.
    #[arg(long)]
    pub convention: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReflectArgs {
    #[arg(long)]
    pub input: Option<String>,
    /// Starting value; defaults to the driver's first value.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<f64>,
    /// above or below.
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SlopeArgs {
    /// Target bundle CSV; defaults to the single line `velocity * t`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub velocity: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub n_samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct InterlaceArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub n_samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplies the base margin `1/sqrt(gamma)`.
    #[arg(long)]
    pub margin_scale: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub terminal: Option<String>,
    /// Number of grid cells on [0, 1].
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub convention: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let env_threads = match std::env::var("WHITTAKER_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            CliError::Usage(format!(
                "WHITTAKER_THREADS must be a positive integer, got {v:?}"
            ))
        })?),
        Err(_) => None,
    };
    // Thread count is an execution detail, not part of the echoed experiment.
    let threads = cli.threads.or(config.threads.take()).or(env_threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    commands::dispatch(cli.command, &mut config)
}
