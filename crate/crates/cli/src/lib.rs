//! `cascade` command-line pipeline: fit, sample, simulate missingness,
//! evaluate and report transport costs.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod bundle;
pub mod commands;
pub mod config;

pub use bundle::{Manifest, Model, ModelBundle};
pub use config::{Precision, Preset, RunConfig};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "CASCADE_THREADS";

/// Marks an error caused by user input (config, paths, data, bundle); such
/// errors exit with code 2, everything else with 1.
#[derive(Debug, Error)]
#[error(transparent)]
pub struct UserError(Box<dyn std::error::Error + Send + Sync>);

impl UserError {
    pub fn wrap<E: std::error::Error + Send + Sync + 'static>(e: E) -> anyhow::Error {
        anyhow::Error::new(Self(Box::new(e)))
    }
}

pub(crate) trait UserResult<T> {
    fn user(self) -> anyhow::Result<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> UserResult<T> for Result<T, E> {
    fn user(self) -> anyhow::Result<T> {
        self.map_err(UserError::wrap)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Cascaded flow matching for mixed-type tabular data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit preprocessing, encoders and both networks; writes a model bundle.
    Fit(Common),
    /// Generate rows from a bundle.
    Sample(Common),
    /// Apply the two-stage MNAR masking to a dataset.
    SimulateMissing(Common),
    /// Score synthetic data against real train/test data.
    Evaluate(Common),
    /// Monte-Carlo transport costs of the coupled and independent sources.
    TransportReport(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set training.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed of this command's random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn resolve(common: &Common, seed_key: &str) -> anyhow::Result<RunConfig> {
    let mut sets = common.set.clone();
    if let Some(s) = common.seed {
        sets.push(format!("{seed_key}={s}"));
    }
    if let Some(o) = &common.out {
        sets.push(format!(
            "paths.out={}",
            serde_json::Value::String(o.display().to_string())
        ));
    }
    RunConfig::resolve(common.config.as_deref(), &sets).user()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Fit(c) => commands::fit(&resolve(c, "training.seed")?),
        Command::Sample(c) => commands::sample(&resolve(c, "sampling.seed")?),
        Command::SimulateMissing(c) => commands::simulate_missing(&resolve(c, "mnar.seed")?),
        Command::Evaluate(c) => commands::evaluate(&resolve(c, "metrics.seed")?),
        Command::TransportReport(c) => commands::transport_report(&resolve(c, "transport.seed")?),
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UserError>()) {
        2
    } else {
        1
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = T>, T: Into<OsString> + Clone>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
