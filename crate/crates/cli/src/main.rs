//! `stressnet`: synthetic data, per-subject pretraining, label-budget sweeps
//! and interchange validation from one executable.
//!
//! Exit codes: 0 success, 1 validation or experiment failure, 2 usage error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stressnet::finetune::Method;
use stressnet::pipeline::Profile;

use crate::config::Overrides;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: missing paths, absent required options.
    Usage(String),
    /// Invalid data or configuration, or a failed experiment.
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<stressnet::Error> for CliError {
    fn from(e: stressnet::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "stressnet", version, about = "Personalized few-label stress regression with self-supervised pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a deterministic synthetic cohort in interchange format.
    Synth(RunArgs),
    /// Pretrain one forecasting encoder per subject and modality.
    Pretrain(RunArgs),
    /// Run the label-budget sweep and write results.csv, aggregate.csv and plot data.
    Sweep(SweepArgs),
    /// Validate interchange directories (a subject directory or a root of them).
    Validate {
        path: PathBuf,
    },
    /// Check converter output: validation plus lossless float32 reload.
    ConvertCheck {
        path: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed every random stream derives from.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all available cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Comma-separated methods to run (ssl, supervised).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Preset supplying every default.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Interchange root to read instead of generating synthetic subjects.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory with encoder artifacts written by `pretrain`.
    #[arg(long, value_name = "DIR", conflicts_with = "pretrain")]
    encoders: Option<PathBuf>,
    /// Pretrain the encoders first (saved under <out>/encoders).
    #[arg(long)]
    pretrain: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ProfileArg {
    Full,
    Smoke,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Smoke => Profile::Smoke,
        }
    }
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            profile: self.profile.map(Profile::from),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            methods: self.methods.clone(),
            data: self.data.clone(),
            encoders: None,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&config::RunConfig::resolve(a.config.as_deref(), &a.overrides())?, a.force),
        Command::Pretrain(a) => {
            commands::pretrain(&config::RunConfig::resolve(a.config.as_deref(), &a.overrides())?, a.force)
        }
        Command::Sweep(a) => {
            let mut flags = a.run.overrides();
            flags.encoders = a.encoders.clone();
            let cfg = config::RunConfig::resolve(a.run.config.as_deref(), &flags)?;
            commands::sweep(&cfg, a.run.force, a.pretrain)
        }
        Command::Validate { path } => commands::validate(&path),
        Command::ConvertCheck { path } => commands::convert_check(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Failure(_) => 1,
                CliError::Usage(_) => 2,
            })
        }
    }
}
