//! `audio` subcommand: mute PHI in a WAV clip from its timed transcript.

use super::{build_agents, read_json, write_json};
use crate::config::PipelineConfig;
use anyhow::Result;
use deid_core::audio::{run_audio_deid, AudioBuffer, TimedWord};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct AudioArgs {
    /// Input WAV file (16-bit mono PCM).
    #[arg(long)]
    pub audio: PathBuf,
    /// Word-level transcript: JSON array of {word, start, end} in seconds.
    #[arg(long)]
    pub transcript: PathBuf,
    /// Muted WAV output path.
    #[arg(long)]
    pub output: PathBuf,
    /// Interval report output path.
    #[arg(long)]
    pub report: PathBuf,
}

pub fn run(args: &AudioArgs, config: &PipelineConfig) -> Result<()> {
    let agents = build_agents(config)?;
    let mut audio = AudioBuffer::read_wav(&args.audio)?;
    let words: Vec<TimedWord> = read_json(&args.transcript)?;

    let duration = audio.duration_secs();
    if words.last().is_some_and(|w| w.end > duration) {
        log::warn!(
            "transcript extends past the clip ({duration:.2}s); intervals will be clamped"
        );
    }

    let report = run_audio_deid(
        &mut audio,
        &words,
        agents.extractor.as_ref(),
        agents.classifier.as_ref(),
        &config.extraction,
        &config.audio,
    )?;

    if report.fail_closed {
        log::warn!("gap classification incomplete; all voiced gaps were muted (fail closed)");
    }
    audio.write_wav(&args.output)?;
    write_json(&args.report, &report)?;
    log::info!("muted {} interval(s)", report.muted.len());
    Ok(())
}
