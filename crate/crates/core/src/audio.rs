//! Audio de-identification.
//!
//! The transcript is de-identified with the text pipeline; each PHI span is
//! mapped back to word timings (plus a safety margin) and muted. Regions the
//! transcriber skipped ("missing regions") cannot be cleared by the text
//! path, so they are conservatively handled: an energy detector drops
//! silent gaps, and the rest are classified from context with gap markers —
//! any classifier failure fails closed and the gap is muted.

use crate::agents::{AgentError, Extractor, GapClassifier};
use crate::extraction::{run_autodeid, ExtractionConfig, ExtractionError, FactDictionary};
use crate::redaction::{redact, ResolvedSpan, UnresolvedMention};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("could not read WAV: {0}")]
    WavRead(String),
    #[error("could not write WAV: {0}")]
    WavWrite(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("transcript word timings are invalid: {0}")]
    BadTranscript(String),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("gap classification failed: {0}")]
    ClassifierFailure(AgentError),
}

/// A transcribed word with its start/end time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub word: String,
    pub start: f64,
    pub end: f64,
}

/// Half-open time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Self {
        TimeInterval { start, end }
    }

    pub fn duration(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Grow by `margin` seconds on both sides, clamped to `[0, max_end]`.
    pub fn expanded(&self, margin: f64, max_end: f64) -> TimeInterval {
        TimeInterval {
            start: (self.start - margin).max(0.0),
            end: (self.end + margin).min(max_end),
        }
    }
}

/// Why an interval is being muted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuteReason {
    /// A PHI span in the transcript mapped back to word timings.
    TranscriptPhi,
    /// An untranscribed voiced gap classified (or presumed) to contain PHI.
    GapPhi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutedInterval {
    pub start: f64,
    pub end: f64,
    pub reason: MuteReason,
}

/// 16-bit mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn read_wav(path: &Path) -> Result<Self, AudioError> {
        let mut reader =
            hound::WavReader::open(path).map_err(|e| AudioError::WavRead(e.to_string()))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(AudioError::UnsupportedFormat(format!(
                "expected mono audio, got {} channels",
                spec.channels
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(AudioError::UnsupportedFormat(format!(
                "expected 16-bit integer PCM, got {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            )));
        }
        let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
        Ok(AudioBuffer {
            samples: samples.map_err(|e| AudioError::WavRead(e.to_string()))?,
            sample_rate: spec.sample_rate,
        })
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer =
            hound::WavWriter::create(path, spec).map_err(|e| AudioError::WavWrite(e.to_string()))?;
        for &s in &self.samples {
            writer
                .write_sample(s)
                .map_err(|e| AudioError::WavWrite(e.to_string()))?;
        }
        writer
            .finalize()
            .map_err(|e| AudioError::WavWrite(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    /// Seconds added on each side of a PHI interval before muting, absorbing
    /// word-timing jitter.
    pub margin_secs: f64,
    /// Untranscribed regions shorter than this are ignored.
    pub min_gap_secs: f64,
    /// Energy-detector frame length in seconds.
    pub vad_frame_secs: f64,
    /// Energy-detector hop length in seconds.
    pub vad_hop_secs: f64,
    /// Absolute RMS floor below which a frame is never voiced.
    pub vad_floor: f64,
    /// Fraction of frames in a gap that must be voiced for it to count.
    pub vad_voiced_fraction: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            margin_secs: 0.2,
            min_gap_secs: 0.05,
            vad_frame_secs: 0.030,
            vad_hop_secs: 0.010,
            vad_floor: 200.0,
            vad_voiced_fraction: 0.5,
        }
    }
}

fn validate_words(words: &[TimedWord]) -> Result<(), AudioError> {
    let mut prev_end = 0.0f64;
    for (i, w) in words.iter().enumerate() {
        if !(w.start.is_finite() && w.end.is_finite()) || w.start < 0.0 || w.end < w.start {
            return Err(AudioError::BadTranscript(format!(
                "word {i} has an invalid time range"
            )));
        }
        if w.start < prev_end - 1e-9 {
            return Err(AudioError::BadTranscript(format!(
                "word {i} starts before the previous word ends"
            )));
        }
        prev_end = w.end;
    }
    Ok(())
}

/// Transcript text as passed to extraction: words joined by single spaces.
pub fn joined_transcript(words: &[TimedWord]) -> String {
    words
        .iter()
        .map(|w| w.word.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Map each character offset in the joined transcript to a word index.
fn char_to_word(words: &[TimedWord]) -> Vec<usize> {
    let mut map = Vec::new();
    for (i, w) in words.iter().enumerate() {
        for _ in w.word.chars() {
            map.push(i);
        }
        if i + 1 < words.len() {
            map.push(i); // the joining space belongs to the earlier word
        }
    }
    map
}

/// Time intervals covered by PHI spans of the joined transcript, expanded by
/// the safety margin and clamped to the clip.
pub fn phi_intervals_from_spans(
    words: &[TimedWord],
    spans: &[ResolvedSpan],
    config: &AudioConfig,
    clip_end: f64,
) -> Result<Vec<TimeInterval>, AudioError> {
    validate_words(words)?;
    let map = char_to_word(words);
    let mut intervals = Vec::new();
    for span in spans {
        if span.is_empty() {
            continue;
        }
        let first = *map.get(span.start).ok_or_else(|| {
            AudioError::BadTranscript("PHI span exceeds the transcript".into())
        })?;
        let last = *map.get(span.end - 1).ok_or_else(|| {
            AudioError::BadTranscript("PHI span exceeds the transcript".into())
        })?;
        intervals.push(
            TimeInterval::new(words[first].start, words[last].end)
                .expanded(config.margin_secs, clip_end),
        );
    }
    Ok(intervals)
}

/// Stretches of the clip not covered by any word timing ("missing regions"):
/// the set subtraction of word intervals from `[0, clip_end]`, keeping gaps
/// at least `min_gap_secs` long.
pub fn missing_regions(words: &[TimedWord], clip_end: f64, config: &AudioConfig) -> Vec<TimeInterval> {
    let mut gaps = Vec::new();
    let mut cursor = 0.0f64;
    for w in words {
        if w.start - cursor >= config.min_gap_secs {
            gaps.push(TimeInterval::new(cursor, w.start));
        }
        cursor = cursor.max(w.end);
    }
    if clip_end - cursor >= config.min_gap_secs {
        gaps.push(TimeInterval::new(cursor, clip_end));
    }
    gaps
}

fn frame_rms(samples: &[i16]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}

/// Keep only gaps that contain speech-like energy.
///
/// The voicing threshold adapts to the clip: `max(vad_floor, 2 x median
/// frame RMS)`. A gap survives when at least `vad_voiced_fraction` of its
/// frames exceed the threshold.
pub fn vad_filter(
    audio: &AudioBuffer,
    gaps: &[TimeInterval],
    config: &AudioConfig,
) -> Vec<TimeInterval> {
    let frame_len = ((config.vad_frame_secs * audio.sample_rate as f64) as usize).max(1);
    let hop = ((config.vad_hop_secs * audio.sample_rate as f64) as usize).max(1);

    let mut all_rms: Vec<f64> = Vec::new();
    let mut start = 0usize;
    while start + frame_len <= audio.samples.len() {
        all_rms.push(frame_rms(&audio.samples[start..start + frame_len]));
        start += hop;
    }
    if all_rms.is_empty() {
        return Vec::new();
    }
    let mut sorted = all_rms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    let threshold = config.vad_floor.max(2.0 * median);

    gaps.iter()
        .filter(|gap| {
            let lo = ((gap.start * audio.sample_rate as f64) as usize).min(audio.samples.len());
            let hi = ((gap.end * audio.sample_rate as f64) as usize).min(audio.samples.len());
            let mut voiced = 0usize;
            let mut total = 0usize;
            let mut pos = lo;
            while pos + frame_len <= hi {
                total += 1;
                if frame_rms(&audio.samples[pos..pos + frame_len]) > threshold {
                    voiced += 1;
                }
                pos += hop;
            }
            if total == 0 {
                // Gap shorter than one frame: judge the whole stretch.
                return frame_rms(&audio.samples[lo..hi]) > threshold;
            }
            voiced as f64 / total as f64 >= config.vad_voiced_fraction
        })
        .copied()
        .collect()
}

fn format_timestamp(secs: f64) -> String {
    let total_cs = (secs * 100.0).round() as u64;
    format!("{:02}:{:05.2}", total_cs / 6000, (total_cs % 6000) as f64 / 100.0)
}

/// Marker inserted into the transcript where an untranscribed voiced gap sits.
pub fn gap_marker(gap: &TimeInterval) -> String {
    format!(
        "<human_timestamp_({} - {})>",
        format_timestamp(gap.start),
        format_timestamp(gap.end)
    )
}

/// Transcript with gap markers spliced between the words around each gap.
pub fn marked_transcript(words: &[TimedWord], gaps: &[TimeInterval]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut gap_iter = gaps.iter().peekable();
    for w in words {
        while let Some(gap) = gap_iter.peek() {
            if gap.end <= w.start + 1e-9 {
                parts.push(gap_marker(gap));
                gap_iter.next();
            } else {
                break;
            }
        }
        parts.push(w.word.clone());
    }
    for gap in gap_iter {
        parts.push(gap_marker(gap));
    }
    parts.join(" ")
}

/// Per-gap PHI verdicts. Fail closed: a classifier error, a missing verdict,
/// or a malformed response marks every affected gap as PHI and flags the
/// document for review.
pub fn classify_gaps(
    words: &[TimedWord],
    gaps: &[TimeInterval],
    classifier: &dyn GapClassifier,
) -> (Vec<(TimeInterval, bool)>, bool) {
    if gaps.is_empty() {
        return (Vec::new(), false);
    }
    let transcript = marked_transcript(words, gaps);
    let markers: Vec<String> = gaps.iter().map(gap_marker).collect();
    match classifier.classify(&transcript, &markers) {
        Ok(verdicts) => {
            let mut fail_closed = false;
            let labeled = gaps
                .iter()
                .zip(&markers)
                .map(|(gap, marker)| match verdicts.get(marker) {
                    Some(&is_phi) => (*gap, is_phi),
                    None => {
                        log::warn!("no verdict for an audio gap; treating it as PHI");
                        fail_closed = true;
                        (*gap, true)
                    }
                })
                .collect();
            (labeled, fail_closed)
        }
        Err(e) => {
            log::warn!("gap classification failed ({e}); muting all voiced gaps");
            (gaps.iter().map(|g| (*g, true)).collect(), true)
        }
    }
}

/// Zero out every sample inside the intervals (sample-exact, intervals
/// merged first).
pub fn mute(audio: &mut AudioBuffer, intervals: &[TimeInterval]) {
    let merged = merge_intervals(intervals);
    for iv in merged {
        let lo = ((iv.start * audio.sample_rate as f64).floor() as usize).min(audio.samples.len());
        let hi = ((iv.end * audio.sample_rate as f64).ceil() as usize).min(audio.samples.len());
        for s in &mut audio.samples[lo..hi] {
            *s = 0;
        }
    }
}

pub fn merge_intervals(intervals: &[TimeInterval]) -> Vec<TimeInterval> {
    let mut sorted: Vec<TimeInterval> = intervals
        .iter()
        .filter(|iv| iv.end > iv.start)
        .copied()
        .collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut merged: Vec<TimeInterval> = Vec::new();
    for iv in sorted {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end + 1e-9 => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AudioDeidReport {
    pub muted: Vec<MutedInterval>,
    pub facts: FactDictionary,
    pub transcript_failures: Vec<UnresolvedMention>,
    /// Gaps the energy detector discarded as silence.
    pub silent_gaps: Vec<(f64, f64)>,
    /// True when any gap was muted because classification failed rather
    /// than returned a PHI verdict.
    pub fail_closed: bool,
}

/// Full audio pipeline: extract PHI from the transcript, add margins, vet
/// untranscribed gaps with energy detection and contextual classification,
/// then mute.
pub fn run_audio_deid(
    audio: &mut AudioBuffer,
    words: &[TimedWord],
    extractor: &dyn Extractor,
    classifier: &dyn GapClassifier,
    extraction: &ExtractionConfig,
    config: &AudioConfig,
) -> Result<AudioDeidReport, AudioError> {
    validate_words(words)?;
    let clip_end = audio.duration_secs();
    let transcript = joined_transcript(words);

    let facts = run_autodeid(&transcript, extraction, extractor)?;
    let outcome = redact(&transcript, &facts);
    let phi = phi_intervals_from_spans(words, &outcome.spans, config, clip_end)?;

    let gaps = missing_regions(words, clip_end, config);
    let voiced = vad_filter(audio, &gaps, config);
    let silent: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|g| !voiced.iter().any(|v| v == *g))
        .map(|g| (g.start, g.end))
        .collect();
    let (verdicts, fail_closed) = classify_gaps(words, &voiced, classifier);

    let mut muted: Vec<MutedInterval> = phi
        .iter()
        .map(|iv| MutedInterval {
            start: iv.start,
            end: iv.end,
            reason: MuteReason::TranscriptPhi,
        })
        .collect();
    for (gap, is_phi) in &verdicts {
        if *is_phi {
            let expanded = gap.expanded(config.margin_secs, clip_end);
            muted.push(MutedInterval {
                start: expanded.start,
                end: expanded.end,
                reason: MuteReason::GapPhi,
            });
        }
    }
    muted.sort_by(|a, b| a.start.total_cmp(&b.start));

    let intervals: Vec<TimeInterval> = muted
        .iter()
        .map(|m| TimeInterval::new(m.start, m.end))
        .collect();
    mute(audio, &intervals);

    Ok(AudioDeidReport {
        muted,
        facts,
        transcript_failures: outcome.failures,
        silent_gaps: silent,
        fail_closed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::scripted::{Script, ScriptedAgents};

    fn word(word: &str, start: f64, end: f64) -> TimedWord {
        TimedWord {
            word: word.into(),
            start,
            end,
        }
    }

    fn tone(buffer: &mut [i16], rate: u32, start: f64, end: f64, amplitude: f64) {
        let lo = (start * rate as f64) as usize;
        let hi = ((end * rate as f64) as usize).min(buffer.len());
        for (i, s) in buffer[lo..hi].iter_mut().enumerate() {
            let t = i as f64 / rate as f64;
            *s = (amplitude * (2.0 * std::f64::consts::PI * 220.0 * t).sin()) as i16;
        }
    }

    #[test]
    fn timestamps_format_as_minutes_seconds_centis() {
        assert_eq!(format_timestamp(0.0), "00:00.00");
        assert_eq!(format_timestamp(2.85), "00:02.85");
        assert_eq!(format_timestamp(75.3), "01:15.30");
        assert_eq!(
            gap_marker(&TimeInterval::new(2.85, 2.95)),
            "<human_timestamp_(00:02.85 - 00:02.95)>"
        );
    }

    #[test]
    fn phi_spans_map_to_margin_expanded_word_times() {
        // "seen by Dr. Smith at Creekwood Hospital today"
        let words = vec![
            word("seen", 3.00, 3.40),
            word("by", 3.60, 3.80),
            word("Dr.", 4.23, 4.45),
            word("Smith", 4.50, 4.80),
            word("at", 12.00, 12.20),
            word("Creekwood", 12.57, 12.90),
            word("Hospital", 12.95, 13.20),
            word("today", 13.60, 14.00),
        ];
        let transcript = joined_transcript(&words);
        let mut facts = FactDictionary::default();
        facts.insert(crate::extraction::EntityMention {
            entity_type: "PERSON".into(),
            surface: "Dr. Smith".into(),
            context_hint: "by Dr. Smith at".into(),
        });
        facts.insert(crate::extraction::EntityMention {
            entity_type: "ORGANIZATION".into(),
            surface: "Creekwood Hospital".into(),
            context_hint: "at Creekwood Hospital today".into(),
        });
        let outcome = redact(&transcript, &facts);
        assert_eq!(outcome.spans.len(), 2);
        let config = AudioConfig {
            margin_secs: 0.3,
            ..AudioConfig::default()
        };
        let intervals = phi_intervals_from_spans(&words, &outcome.spans, &config, 20.0).unwrap();
        assert!((intervals[0].start - 3.93).abs() < 1e-9);
        assert!((intervals[0].end - 5.10).abs() < 1e-9);
        assert!((intervals[1].start - 12.27).abs() < 1e-9);
        assert!((intervals[1].end - 13.50).abs() < 1e-9);
    }

    #[test]
    fn margin_clamps_to_clip_bounds() {
        let iv = TimeInterval::new(0.1, 19.95).expanded(0.3, 20.0);
        assert_eq!(iv.start, 0.0);
        assert_eq!(iv.end, 20.0);
    }

    #[test]
    fn missing_regions_are_the_untranscribed_set_difference() {
        let words = vec![
            word("a", 0.0, 2.85),
            word("b", 2.95, 7.42),
            word("c", 7.57, 15.10),
            word("d", 15.30, 19.00),
        ];
        let gaps = missing_regions(&words, 20.0, &AudioConfig::default());
        let got: Vec<(f64, f64)> = gaps.iter().map(|g| (g.start, g.end)).collect();
        assert_eq!(got, vec![(2.85, 2.95), (7.42, 7.57), (15.1, 15.3), (19.0, 20.0)]);
    }

    #[test]
    fn tiny_gaps_below_threshold_are_ignored() {
        let words = vec![word("a", 0.0, 1.0), word("b", 1.01, 2.0)];
        assert!(missing_regions(&words, 2.0, &AudioConfig::default()).is_empty());
    }

    #[test]
    fn overlapping_word_timings_are_rejected() {
        let words = vec![word("a", 0.0, 1.0), word("b", 0.5, 2.0)];
        assert!(matches!(
            phi_intervals_from_spans(&words, &[], &AudioConfig::default(), 2.0),
            Err(AudioError::BadTranscript(_))
        ));
    }

    #[test]
    fn vad_keeps_voiced_gaps_and_drops_silence() {
        let rate = 16_000u32;
        let mut samples = vec![0i16; (rate as usize) * 10];
        // Sparse speech so the median frame RMS stays near zero.
        tone(&mut samples, rate, 0.0, 1.0, 8000.0);
        tone(&mut samples, rate, 5.0, 6.0, 8000.0);
        let gaps = [
            TimeInterval::new(2.0, 2.5), // silent
            TimeInterval::new(5.1, 5.6), // voiced
            TimeInterval::new(8.0, 8.5), // silent
        ];
        let audio = AudioBuffer {
            samples,
            sample_rate: rate,
        };
        let kept = vad_filter(&audio, &gaps, &AudioConfig::default());
        assert_eq!(kept, vec![TimeInterval::new(5.1, 5.6)]);
    }

    #[test]
    fn vad_floor_rejects_low_level_noise() {
        let rate = 16_000u32;
        let mut samples = vec![0i16; (rate as usize) * 4];
        tone(&mut samples, rate, 1.0, 1.5, 50.0); // below the absolute floor
        let audio = AudioBuffer {
            samples,
            sample_rate: rate,
        };
        let kept = vad_filter(&audio, &[TimeInterval::new(1.0, 1.5)], &AudioConfig::default());
        assert!(kept.is_empty());
    }

    #[test]
    fn marked_transcript_places_markers_between_words() {
        let words = vec![word("hello", 0.0, 1.0), word("world", 3.0, 4.0)];
        let gaps = [TimeInterval::new(1.0, 3.0)];
        assert_eq!(
            marked_transcript(&words, &gaps),
            "hello <human_timestamp_(00:01.00 - 00:03.00)> world"
        );
    }

    #[test]
    fn classifier_errors_fail_closed() {
        let words = vec![word("hello", 0.0, 1.0)];
        let gaps = [TimeInterval::new(1.0, 2.0)];
        let script: Script = serde_json::from_value(serde_json::json!({
            "fail": {"classifier": true}
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let (verdicts, fail_closed) = classify_gaps(&words, &gaps, &agents);
        assert!(fail_closed);
        assert_eq!(verdicts, vec![(TimeInterval::new(1.0, 2.0), true)]);
    }

    #[test]
    fn missing_verdicts_fail_closed_per_gap() {
        let words = vec![word("hello", 0.0, 1.0), word("bye", 3.0, 4.0)];
        let gaps = [TimeInterval::new(1.0, 2.0), TimeInterval::new(2.2, 3.0)];
        // Script answers only the first marker.
        let script: Script = serde_json::from_value(serde_json::json!({
            "gap_verdicts": {"00:01.00 - 00:02.00": false}
        }))
        .unwrap();
        let agents = ScriptedAgents::new(script);
        let (verdicts, fail_closed) = classify_gaps(&words, &gaps, &agents);
        assert!(fail_closed);
        assert!(!verdicts[0].1);
        assert!(verdicts[1].1);
    }

    #[test]
    fn mute_zeroes_exactly_the_selected_samples() {
        let rate = 1000u32;
        let mut audio = AudioBuffer {
            samples: vec![1000i16; 5000],
            sample_rate: rate,
        };
        mute(&mut audio, &[TimeInterval::new(1.0, 2.0), TimeInterval::new(1.5, 2.5)]);
        // Per-sample oracle: merged interval is [1.0, 2.5).
        for (i, &s) in audio.samples.iter().enumerate() {
            let t = i as f64 / rate as f64;
            if (1.0..2.5).contains(&t) {
                assert_eq!(s, 0, "sample at {t}s should be muted");
            } else {
                assert_eq!(s, 1000, "sample at {t}s should be untouched");
            }
        }
    }

    #[test]
    fn merge_intervals_coalesces_overlaps_and_drops_empties() {
        let merged = merge_intervals(&[
            TimeInterval::new(3.0, 4.0),
            TimeInterval::new(1.0, 2.0),
            TimeInterval::new(1.5, 3.2),
            TimeInterval::new(5.0, 5.0),
        ]);
        assert_eq!(merged, vec![TimeInterval::new(1.0, 4.0)]);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let audio = AudioBuffer {
            samples: (0..1600).map(|i| (i % 100) as i16 * 10).collect(),
            sample_rate: 16_000,
        };
        audio.write_wav(&path).unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(back, audio);
    }
}
