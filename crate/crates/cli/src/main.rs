//! Command-line front end for the clinical de-identification pipeline.
//!
//! Subcommands: `deid` (schema-driven record de-identification), `relex`
//! (consistent surrogate replacement), `audio` (transcript-guided muting),
//! and `eval` (span scoring). Log output never contains PHI: entity types,
//! counts, and field names only.

use anyhow::Result;
use clap::{Parser, Subcommand};
use deid_cli::commands;
use deid_cli::config::{ConfigOverrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "deid", about = "Multi-modal clinical record de-identification", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Subcommand)]
enum Command {
    /// De-identify structured records per their schemas.
    Deid(commands::deid::DeidArgs),
    /// Replace redacted entities with consistent realistic surrogates.
    Relex(commands::relex::RelexArgs),
    /// Mute PHI in audio using its word-level transcript.
    Audio(commands::audio::AudioArgs),
    /// Score predicted PHI spans against gold annotations.
    Eval(commands::eval::EvalArgs),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Deid(args) => {
            let config = PipelineConfig::resolve(&cli.overrides)?;
            commands::deid::run(args, &config)
        }
        Command::Relex(args) => {
            let config = PipelineConfig::resolve(&cli.overrides)?;
            commands::relex::run(args, &config)
        }
        Command::Audio(args) => {
            let config = PipelineConfig::resolve(&cli.overrides)?;
            commands::audio::run(args, &config)
        }
        Command::Eval(args) => commands::eval::run(args),
    }
}
