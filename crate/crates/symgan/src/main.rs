use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symgan::config::PipelineConfig;
use symgan::pipeline;

/// Synthetic handwritten music: prepare data, train, generate a symbol
/// bank, engrave staff lines and evaluate them.
#[derive(Parser)]
#[command(name = "symgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, normalize and balance the configured sources.
    PrepareData(Common),
    /// Train (or resume) the networks on the prepared data.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print losses every N steps (0 = quiet).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Generate a symbol bank from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Engrave every configured score with a symbol bank.
    Engrave {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Compare line images against the reference set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Candidate directory; defaults to the engraved lines.
        candidate: Option<PathBuf>,
    },
}

fn load(c: &Common) -> symgan::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = std::path::absolute(o).unwrap_or_else(|_| o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> symgan::Result<()> {
    match cli.command {
        Command::PrepareData(c) => pipeline::prepare_data(&load(&c)?).map(drop),
        Command::Train { common, resume, log_every } => {
            let s = pipeline::train(&load(&common)?, resume.as_deref(), log_every)?;
            println!("trained {} steps (now at step {}); wrote {}", s.steps_run, s.final_step, s.latest.display());
            Ok(())
        }
        Command::Generate { common, checkpoint } => pipeline::generate(&load(&common)?, checkpoint.as_deref()).map(drop),
        Command::Engrave { common, bank } => pipeline::engrave(&load(&common)?, bank.as_deref()).map(drop),
        Command::Evaluate { common, candidate } => pipeline::evaluate(&load(&common)?, candidate.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
