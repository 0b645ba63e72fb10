//! Fixed-length clip segmentation, keyframe sampling and cost estimation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::media::{Frame, FrameExtractor, FrameStore};
use crate::par;
use crate::types::{Clip, Keyframe, SourceVideo, TimeInterval};

// Slack for float boundary comparisons, in seconds.
const EPS: f64 = 1e-9;

/// Approximate image tokens charged per 512px keyframe.
pub const TOKENS_PER_KEYFRAME: u64 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Seconds per clip.
    pub clip_duration: f64,
    /// Keyframes per second.
    pub sample_rate: f64,
    /// Pixels on the shorter side of every keyframe.
    pub resize_short_side: u32,
    /// Tails shorter than this are merged into the previous clip.
    pub min_tail: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            clip_duration: 3.0,
            sample_rate: 1.0,
            resize_short_side: 512,
            min_tail: 1.0,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_duration > 0.0) {
            return Err(Error::Config("clip_duration must be > 0".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be > 0".into()));
        }
        if self.resize_short_side < 64 {
            return Err(Error::Config("resize_short_side must be >= 64".into()));
        }
        if !(self.min_tail >= 0.0) {
            return Err(Error::Config("min_tail must be >= 0".into()));
        }
        Ok(())
    }
}

/// Result of segmenting one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub clips: Vec<Clip>,
    /// The whole source is shorter than `min_tail`; it becomes one clip.
    pub degenerate: bool,
}

/// Number of full-length clips that fit, tolerant of float noise.
fn full_clips(duration: f64, clip: f64) -> usize {
    ((duration + EPS) / clip).floor() as usize
}

/// Clip boundaries for a source of `duration` seconds.
pub fn boundaries(duration: f64, cfg: &IngestConfig) -> Vec<TimeInterval> {
    let n = full_clips(duration, cfg.clip_duration);
    let mut out: Vec<TimeInterval> = (0..n)
        .map(|k| TimeInterval {
            start: k as f64 * cfg.clip_duration,
            end: (k + 1) as f64 * cfg.clip_duration,
        })
        .collect();
    match out.last_mut() {
        None => out.push(TimeInterval {
            start: 0.0,
            end: duration,
        }),
        Some(last) => {
            let tail = duration - last.end;
            if tail <= EPS || tail < cfg.min_tail {
                last.end = duration;
            } else {
                let start = last.end;
                out.push(TimeInterval {
                    start,
                    end: duration,
                });
            }
        }
    }
    out
}

pub fn clip_count(duration: f64, cfg: &IngestConfig) -> usize {
    boundaries(duration, cfg).len()
}

/// Keyframe times for an interval: `floor(len * rate)` frames spaced `1/rate`
/// apart from the interval start, never fewer than one.
pub fn keyframe_times(interval: TimeInterval, cfg: &IngestConfig) -> Vec<Keyframe> {
    let count = keyframe_count(interval.len(), cfg.sample_rate).max(1);
    (0..count)
        .map(|k| Keyframe {
            timestamp: interval.start + k as f64 / cfg.sample_rate,
        })
        .collect()
}

pub fn keyframe_count(len: f64, rate: f64) -> usize {
    (len * rate + EPS).floor() as usize
}

/// Splits a source into clips tiling `[0, duration)`. Ids start at
/// `id_offset + 1`.
pub fn segment(source: &SourceVideo, cfg: &IngestConfig, id_offset: u32) -> Result<Segmentation> {
    cfg.validate()?;
    if !(source.duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "source `{}` has non-positive duration",
            source.video_id
        )));
    }
    let degenerate = source.duration < cfg.min_tail;
    if degenerate {
        warn!(
            video_id = %source.video_id,
            duration = source.duration,
            "source shorter than min_tail, producing a single degenerate clip"
        );
    }
    let clips = boundaries(source.duration, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, interval)| Clip {
            clip_id: id_offset + i as u32 + 1,
            source: source.video_id.clone(),
            keyframes: keyframe_times(interval, cfg),
            interval,
        })
        .collect();
    Ok(Segmentation { clips, degenerate })
}

/// Extracts (or reuses from `store`) every keyframe of `clip`.
pub fn extract_keyframes(
    clip: &Clip,
    source: &SourceVideo,
    cfg: &IngestConfig,
    extractor: &dyn FrameExtractor,
    store: &FrameStore,
) -> Result<Vec<Frame>> {
    let ext = extractor.extension(source);
    clip.keyframes
        .iter()
        .map(|kf| {
            let path = store.path(&source.video_id, kf.timestamp, cfg.resize_short_side, ext);
            if !path.exists() {
                extractor.extract(source, kf.timestamp, cfg.resize_short_side, &path)?;
            }
            Ok(Frame {
                timestamp: kf.timestamp,
                path,
                media_type: extractor.media_type(source).to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionOutcome {
    pub frames: BTreeMap<u32, Vec<Frame>>,
    /// Clips excluded because the toolkit failed on them.
    pub excluded: Vec<(u32, String)>,
}

/// Extracts keyframes for all clips; failures exclude the clip with a warning.
pub fn extract_all(
    clips: &[Clip],
    sources: &[SourceVideo],
    cfg: &IngestConfig,
    extractor: &dyn FrameExtractor,
    store: &FrameStore,
) -> Result<ExtractionOutcome> {
    let by_id: BTreeMap<&str, &SourceVideo> =
        sources.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let results = par::map_ordered(clips, |clip| {
        let source = by_id
            .get(clip.source.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("unknown source `{}`", clip.source)))?;
        Ok::<_, Error>(extract_keyframes(clip, source, cfg, extractor, store))
    });
    let mut outcome = ExtractionOutcome::default();
    for (clip, res) in clips.iter().zip(results) {
        match res? {
            Ok(frames) => {
                outcome.frames.insert(clip.clip_id, frames);
            }
            Err(e) => {
                warn!(clip_id = clip.clip_id, error = %e, "keyframe extraction failed, excluding clip");
                outcome.excluded.push((clip.clip_id, e.to_string()));
            }
        }
    }
    Ok(outcome)
}

/// How attribute families are requested from the captioning agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// One call per clip returns caption, context, defects and highlight.
    #[default]
    Unified,
    /// Three calls per clip, each carrying every keyframe.
    Isolated,
}

impl PromptMode {
    pub fn calls_per_clip(self) -> u64 {
        match self {
            PromptMode::Unified => 1,
            PromptMode::Isolated => 3,
        }
    }
}

/// API pricing and text-token budget per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub usd_per_million_input: f64,
    pub usd_per_million_output: f64,
    pub tokens_per_keyframe: u64,
    /// Prompt and structured-text tokens attributed to each clip over the
    /// whole pipeline.
    pub input_text_tokens_per_clip: u64,
    pub output_text_tokens_per_clip: u64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self {
            usd_per_million_input: 2.50,
            usd_per_million_output: 10.00,
            tokens_per_keyframe: TOKENS_PER_KEYFRAME,
            input_text_tokens_per_clip: 500,
            output_text_tokens_per_clip: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub clips: u64,
    pub keyframes: u64,
    pub mode: PromptMode,
    pub input_image_tokens: u64,
    pub input_text_tokens: u64,
    pub output_text_tokens: u64,
    pub usd: f64,
}

pub fn estimate_cost(clips: &[Clip], pricing: &Pricing, mode: PromptMode) -> CostReport {
    let keyframes: u64 = clips.iter().map(|c| c.keyframes.len() as u64).sum();
    let n = clips.len() as u64;
    let input_image_tokens = keyframes * mode.calls_per_clip() * pricing.tokens_per_keyframe;
    let input_text_tokens = n * pricing.input_text_tokens_per_clip;
    let output_text_tokens = n * pricing.output_text_tokens_per_clip;
    let usd = (input_image_tokens + input_text_tokens) as f64 * pricing.usd_per_million_input
        / 1e6
        + output_text_tokens as f64 * pricing.usd_per_million_output / 1e6;
    CostReport {
        clips: n,
        keyframes,
        mode,
        input_image_tokens,
        input_text_tokens,
        output_text_tokens,
        usd,
    }
}
