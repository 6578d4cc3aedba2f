use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratio_cli::config::{ExperimentConfig, ReportConfig};
use ratio_cli::error::Result;
use ratio_cli::{pipeline, report};

#[derive(Parser)]
#[command(
    name = "ratio",
    version,
    about = "Train, calibrate, and probe confidence-aware robust classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run manifest
    Train(StageArgs),
    /// Fit a softmax temperature on the validation split
    Calibrate(StageArgs),
    /// Measure accuracy, robustness, calibration, and OOD separation
    Evaluate(StageArgs),
    /// Sweep visual counterfactuals from the trained model
    Counterfactual(StageArgs),
    /// Tabulate metric bundles from several runs
    Report(ReportArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config JSON; a run manifest or its directory also works
    #[arg(long)]
    config: PathBuf,
    /// Override the config's root seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report config JSON listing manifests and thresholds
    #[arg(long)]
    config: PathBuf,
    /// Override the report output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_stage(args: &StageArgs, stage: fn(&ExperimentConfig) -> Result<()>) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.apply_overrides(args.seed, args.out.as_deref());
    config.validate()?;
    stage(&config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_stage(&args, pipeline::cmd_train),
        Command::Calibrate(args) => run_stage(&args, pipeline::cmd_calibrate),
        Command::Evaluate(args) => run_stage(&args, pipeline::cmd_evaluate),
        Command::Counterfactual(args) => run_stage(&args, pipeline::cmd_counterfactual),
        Command::Report(args) => {
            let mut config = ReportConfig::load(&args.config)?;
            if let Some(out) = args.out {
                config.out_dir = out;
            }
            report::cmd_report(&config)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
