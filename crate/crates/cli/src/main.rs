mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

/// Exit status for configuration and schema errors.
const EXIT_CONFIG: u8 = 2;
/// Exit status for failures while running a valid configuration.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "dist-tse", version, about = "Distance-conditioned target speech extraction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML with [dataset], [model], [train], [sweep], [data]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation and training; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Config override, `key.path=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    /// Trained checkpoint (needs --checkpoint).
    Model,
    /// Returns the reference target.
    Oracle,
    /// Returns the mixture.
    Passthrough,
    /// Returns silence.
    Null,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the recipe's RIRs into a store (WAVs + manifest.jsonl).
    GenRir,
    /// Render train/val/test examples to disk.
    GenData,
    /// Train a model; writes checkpoints and train_log.jsonl.
    Train,
    /// Score an extractor on the test split over repeated passes.
    Eval {
        #[arg(long, value_enum, default_value = "model")]
        extractor: ExtractorKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Query an extractor over the distance grid and detect speaker peaks.
    Sweep {
        #[arg(long, value_enum, default_value = "model")]
        extractor: ExtractorKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Single mixture WAV; without it the test split is swept.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Test mixtures swept when no --input is given.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Render training curves and/or a sweep curve as SVG.
    Plot {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenRir => "gen-rir",
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Plot { .. } => "plot",
        }
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<dist_tse::Error>() {
            Some(dist_tse::Error::Config(_) | dist_tse::Error::Schema(_)) => Failure::Config(format!("{e:#}")),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<dist_tse::Error> for Failure {
    fn from(e: dist_tse::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let ctx = commands::Context {
        command: cli.command.name(),
        config_path: cli.config.clone(),
        overrides: cli.set.clone(),
        out: cli.out.clone(),
        cfg,
    };
    match cli.command {
        Command::GenRir => commands::gen_rir(&ctx),
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval { extractor, checkpoint } => commands::eval(&ctx, extractor, checkpoint.as_deref()),
        Command::Sweep {
            extractor,
            checkpoint,
            input,
            limit,
        } => commands::sweep(&ctx, extractor, checkpoint.as_deref(), input.as_deref(), limit),
        Command::Plot { log, curve } => commands::plot(&ctx, log.as_deref(), curve.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
