mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entbonus::entropy::EstimatorKind;
use entbonus::policy::ModelKind;
use entbonus::trainer::{BaselineKind, OptimizerKind};
use entbonus::verify::Suite;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Verify(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Verify(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<entbonus::Error> for CliError {
    fn from(e: entbonus::Error) -> Self {
        use entbonus::Error as E;
        match e {
            E::NonFinite(_) => CliError::Numeric(e.to_string()),
            E::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "entbonus", version, about = "Policy-gradient training with entropy-bonus estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct TrainArgs {
    /// Run file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Inclusive range `0..9`, a single seed, or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    entropy_weight: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    baseline: Option<BaselineKind>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run per seed and write curves, checkpoints and a summary.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the environment described by a run file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Decode actions greedily instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the entropy estimators against exact enumeration; CSV on stdout.
    Verify {
        /// unbiasedness, gradient, theorem2, theorem3, beam or all.
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo trials per check (suite default when omitted).
        #[arg(long)]
        trials: Option<usize>,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every combination of entropy weight and learning rate.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',')]
        entropy_weights: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lrs: Vec<f64>,
    },
    /// Print the run-file reference with every default.
    Defaults,
}

fn parse_suites(s: &str) -> Result<Vec<Suite>, CliError> {
    if s == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    s.parse::<Suite>().map(|x| vec![x]).map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => commands::train(&args.try_into()?).map(|_| ()),
        Command::Evaluate { checkpoint, config, episodes, greedy, seed } => {
            commands::evaluate(&checkpoint, &config, episodes, greedy, seed)
        }
        Command::Verify { suite, seed, trials, out } => commands::verify(&parse_suites(&suite)?, seed, trials, out.as_deref()),
        Command::Sweep { train, entropy_weights, lrs } => commands::sweep(&train.try_into()?, &entropy_weights, &lrs),
        Command::Defaults => {
            print!("{}", config::defaults_reference());
            Ok(())
        }
    }
}

impl TryFrom<TrainArgs> for commands::TrainRequest {
    type Error = CliError;

    fn try_from(a: TrainArgs) -> Result<Self, CliError> {
        let seeds = a.seeds.as_deref().map(config::parse_seeds).transpose().map_err(|m| CliError::Config(format!("--seeds: {m}")))?;
        Ok(commands::TrainRequest {
            config: a.config,
            jobs: a.jobs.max(1),
            out: a.out,
            overrides: config::Overrides {
                model: a.model,
                estimator: a.estimator,
                entropy_weight: a.entropy_weight,
                learning_rate: a.lr,
                episodes: a.episodes,
                baseline: a.baseline,
                optimizer: a.optimizer,
                seeds,
            },
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
