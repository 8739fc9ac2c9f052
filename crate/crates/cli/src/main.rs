use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod run;
mod stages;

/// Series saliency pipeline. Every stage reads the outputs of the stages
/// before it from a run directory.
#[derive(Parser)]
#[command(name = "ssal", version = env!("SSAL_VERSION"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, scale and split a CSV series into a new run directory.
    Prepare(PrepareArgs),
    /// Train the forecaster and its shared mask.
    Train(TrainArgs),
    /// Score the trained model on the test interval.
    Evaluate(RunArgs),
    /// Optimize saliency masks for test samples.
    Interpret(InterpretArgs),
    /// Order features by the similarity of their saliency over time.
    Permute(PermuteArgs),
    /// Per-feature saliency and periodicity.
    Analyze(AnalyzeArgs),
    /// Write PGM heatmaps of every mask in a run.
    Export(ExportArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Override every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast and score a single column.
    #[arg(long)]
    pub target_col: Option<usize>,
    /// Treat the first CSV column as timestamps and ignore it.
    #[arg(long)]
    pub timestamp_col: bool,
}

#[derive(Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Prepare a fresh run from this configuration first.
    #[arg(long, requires = "out", conflicts_with = "run")]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub out: Option<PathBuf>,
    /// Train inside an already prepared run.
    #[arg(long, required_unless_present = "config")]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Number of test samples, spread evenly over the test interval.
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PermuteArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Destination directory; defaults to `<run>/export`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|cause| {
        cause.downcast_ref::<run::Invalid>().is_some()
            || cause
                .downcast_ref::<ssal_core::Error>()
                .is_some_and(ssal_core::Error::is_validation)
    });
    if validation {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSAL_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Prepare(a) => stages::prepare::run(&a).map(|_| ()),
        Command::Train(a) => stages::train::run(&a),
        Command::Evaluate(a) => stages::evaluate::run(&a),
        Command::Interpret(a) => stages::interpret::run(&a),
        Command::Permute(a) => stages::permute::run(&a),
        Command::Analyze(a) => stages::analyze::run(&a),
        Command::Export(a) => stages::export::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
