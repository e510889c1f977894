use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use replaynet_core::{Command, ModeSelection, Pipeline, PipelineConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    Synth,
    Featurize,
    Train,
    Codes,
    Backend,
    Score,
    Eval,
    All,
}

impl From<Stage> for Command {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Synth => Command::Synth,
            Stage::Featurize => Command::Featurize,
            Stage::Train => Command::Train,
            Stage::Codes => Command::Codes,
            Stage::Backend => Command::Backend,
            Stage::Score => Command::Score,
            Stage::Eval => Command::Eval,
            Stage::All => Command::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Multitask,
    Baseline,
    Both,
}

/// Replay-attack detection pipeline: synthetic corpus, multi-task Light-CNN,
/// Gaussian back-end and EER evaluation.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Pipeline stage to run; `all` chains every stage.
    #[arg(value_enum)]
    command: Stage,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// 100 x 129 inputs and quarter-width channels.
    #[arg(long)]
    reduced: bool,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Base seed for corpus, features and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress lines on stderr.
    #[arg(long, short)]
    quiet: bool,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(&cli.config)
        .with_context(|| format!("reading config {}", cli.config.display()))?;
    if cli.reduced {
        cfg.reduced = true;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = match mode {
            Mode::Multitask => ModeSelection::Multitask,
            Mode::Baseline => ModeSelection::Baseline,
            Mode::Both => ModeSelection::Both,
        };
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let quiet = cli.quiet;
    let mut pipeline = Pipeline::new(cfg).with_progress(move |line| {
        if !quiet {
            eprintln!("{line}");
        }
    });
    let command = Command::from(cli.command);
    pipeline.run(command)?;
    if matches!(command, Command::Eval | Command::All) {
        print!("{}", std::fs::read_to_string(pipeline.report_path())?);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
