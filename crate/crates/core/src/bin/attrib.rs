use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use attrib_core::pipeline::{self, PipelineConfig, PipelineError, RunArgs, Subcommand};
use clap::{Args, CommandFactory, FromArgMatches, Parser};

/// Tile-based attribution pipeline.
///
/// Every subcommand reads the same JSON configuration. Keys left out take
/// the defaults listed below.
#[derive(Parser, Debug)]
#[command(name = "attrib", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Validate the manifest and write the normalised record list.
    Ingest(Common),
    /// Run the image quality gate on every work.
    Qc(Common),
    /// Cut works into 512-px tiles in the tile store.
    Tile(Common),
    /// Assign works to train/validation/test.
    Split(Common),
    /// Train the five ensemble members on the train split.
    Train(Common),
    /// Choose the decision threshold on the validation split.
    Calibrate(Common),
    /// Score the test split at tile and image level.
    Evaluate(Common),
    /// Score one artwork and write its analysis report.
    Analyze(Common),
    /// Draw the uncertainty and confidence maps from a report.
    Render(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artwork id, required by analyze and render.
    #[arg(long)]
    artwork: Option<String>,
    /// Split seed (split) or base training seed (train).
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed decision threshold in (0, 1), bypassing calibration.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory for reports and maps [default: <work_dir>/reports].
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Subcommand, Common) {
        match self {
            Command::Ingest(c) => (Subcommand::Ingest, c),
            Command::Qc(c) => (Subcommand::Qc, c),
            Command::Tile(c) => (Subcommand::Tile, c),
            Command::Split(c) => (Subcommand::Split, c),
            Command::Train(c) => (Subcommand::Train, c),
            Command::Calibrate(c) => (Subcommand::Calibrate, c),
            Command::Evaluate(c) => (Subcommand::Evaluate, c),
            Command::Analyze(c) => (Subcommand::Analyze, c),
            Command::Render(c) => (Subcommand::Render, c),
        }
    }
}

fn run(sub: Subcommand, common: Common) -> Result<String, PipelineError> {
    let config = PipelineConfig::load(&common.config)?;
    let args = RunArgs {
        artwork: common.artwork,
        seed: common.seed,
        threshold: common.threshold,
        out: common.out,
    };
    pipeline::run(sub, &config, &args)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = format!("Configuration defaults:\n{}", PipelineConfig::defaults_json());
    let matches = Cli::command()
        .mut_subcommands(|c| c.after_long_help(help.clone()))
        .after_long_help(help.clone())
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches).context("parsing arguments") {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(pipeline::EXIT_VALIDATION as u8);
        }
    };
    let (sub, common) = cli.command.split();
    match run(sub, common) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
