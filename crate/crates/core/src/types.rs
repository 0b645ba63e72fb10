//! Domain model shared by every pipeline stage.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest;
use crate::pipeline::JobConfig;

/// One raw input video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceVideo {
    pub video_id: String,
    /// File path, or `synthetic:<name>` for generated placeholder footage.
    pub uri: String,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    30.0
}

/// Half-open span `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end && end.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "interval [{start}, {end}) must satisfy 0 <= start < end"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// A sampled frame position, in seconds from the start of the source video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub timestamp: f64,
}

/// Fixed-length slice of a source video; the unit every stage works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    /// Global id, consecutive from 1 across all sources of a job.
    pub clip_id: u32,
    pub source: String,
    pub interval: TimeInterval,
    pub keyframes: Vec<Keyframe>,
}

/// Quality defects in `[0, 1]`; zero means the defect is absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectScores {
    pub occlusion: f64,
    pub jittering: f64,
    pub overexposure: f64,
    pub meaningless: f64,
}

impl DefectScores {
    pub fn max(&self) -> f64 {
        self.occlusion
            .max(self.jittering)
            .max(self.overexposure)
            .max(self.meaningless)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.occlusion,
            self.jittering,
            self.overexposure,
            self.meaningless,
        ]
    }
}

pub const CONTEXT_FIELD_MAX_CHARS: usize = 256;

/// What / where / when / who summary of a clip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextualAttributes {
    pub what: String,
    #[serde(rename = "where")]
    pub where_: String,
    pub when: String,
    pub who: String,
}

/// Everything the captioning agent reports for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDescription {
    pub clip_id: u32,
    pub raw_caption: String,
    pub contextual: ContextualAttributes,
    pub defects: DefectScores,
    pub highlight: f64,
}

/// Dynamic filter output. Exactly one flag is set for canonical key order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub filter_flag: bool,
    pub highlight_flag: bool,
    pub score: f64,
}

/// Per-clip signed saliency in `[-1, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaliencyTrack {
    pub values: BTreeMap<u32, f64>,
}

/// A group of selected clips sharing a theme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theme {
    pub title: String,
    pub clip_ids: Vec<u32>,
}

/// Ordered storyline returned by the arrangement agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub ordered_clip_ids: Vec<u32>,
    pub clip_roles: BTreeMap<u32, String>,
    pub themes: Vec<Theme>,
    pub global_storyline: String,
}

impl CompositionPlan {
    /// Checks uniqueness, membership in `candidates`, and that themes are a
    /// partition of a subset of the ordered ids.
    pub fn validate(&self, candidates: &[u32]) -> Result<()> {
        let allowed: HashSet<u32> = candidates.iter().copied().collect();
        let mut seen = HashSet::new();
        for id in &self.ordered_clip_ids {
            if !allowed.contains(id) {
                return Err(Error::PlanInconsistent(*id));
            }
            if !seen.insert(*id) {
                return Err(Error::InvalidInput(format!("clip {id} appears twice")));
            }
        }
        let mut themed = HashSet::new();
        for theme in &self.themes {
            for id in &theme.clip_ids {
                if !seen.contains(id) || !themed.insert(*id) {
                    return Err(Error::InvalidInput(format!(
                        "theme `{}` has clip {id} outside the plan or in another theme",
                        theme.title
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Quality level of one annotated clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Rank {
    Wasted = 0,
    Ambiguous = 1,
    Normal = 2,
    Highlight = 3,
}

impl TryFrom<u8> for Rank {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Rank::Wasted),
            1 => Ok(Rank::Ambiguous),
            2 => Ok(Rank::Normal),
            3 => Ok(Rank::Highlight),
            other => Err(format!("rank {other} outside 0..=3")),
        }
    }
}

impl From<Rank> for u8 {
    fn from(r: Rank) -> u8 {
        r as u8
    }
}

/// Ground-truth ranks for one video, keyed by clip id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub video_id: String,
    pub ranks: BTreeMap<u32, Rank>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MaterialRichness,
    Appeal,
    ExcitingSegments,
    WastedFootage,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::MaterialRichness,
        Criterion::Appeal,
        Criterion::ExcitingSegments,
        Criterion::WastedFootage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::MaterialRichness => "Material Richness",
            Criterion::Appeal => "Appeal",
            Criterion::ExcitingSegments => "Exciting Segments",
            Criterion::WastedFootage => "Amount of Wasted Footage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub score: f64,
    pub reason: String,
}

/// Evaluation agent verdict on a final cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub criteria: BTreeMap<Criterion, CriterionScore>,
    pub average: f64,
}

/// A job whose sources passed validation, with the clip-id offset of each
/// source in the global sequence.
#[derive(Debug, Clone)]
pub struct ValidatedJob {
    pub sources: Vec<SourceVideo>,
    pub id_offsets: Vec<u32>,
}

impl ValidatedJob {
    /// Segments every source; ids continue across sources in input order.
    pub fn clips(&self, cfg: &ingest::IngestConfig) -> Result<Vec<Clip>> {
        let mut clips = Vec::new();
        for (source, offset) in self.sources.iter().zip(&self.id_offsets) {
            clips.extend(ingest::segment(source, cfg, *offset)?.clips);
        }
        Ok(clips)
    }
}

/// Validates sources and configuration and plans the global clip-id namespace.
pub fn validate_job(sources: &[SourceVideo], config: &JobConfig) -> Result<ValidatedJob> {
    let mut problems = Vec::new();
    if sources.is_empty() {
        problems.push("job has no sources".to_string());
    }
    let mut ids = HashSet::new();
    for s in sources {
        if s.video_id.trim().is_empty() {
            problems.push("empty video_id".to_string());
        }
        if !ids.insert(s.video_id.as_str()) {
            problems.push(format!("duplicate id `{}`", s.video_id));
        }
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            problems.push(format!(
                "source `{}` has non-positive duration {}",
                s.video_id, s.duration
            ));
        }
        if !(s.frame_rate > 0.0) {
            problems.push(format!("source `{}` has invalid frame rate", s.video_id));
        }
    }
    if let Err(e) = config.validate() {
        problems.push(e.to_string());
    }
    if !problems.is_empty() {
        return Err(Error::InvalidJob(problems));
    }

    let mut id_offsets = Vec::with_capacity(sources.len());
    let mut next = 0u32;
    for s in sources {
        id_offsets.push(next);
        next += ingest::clip_count(s.duration, &config.ingest) as u32;
    }
    Ok(ValidatedJob {
        sources: sources.to_vec(),
        id_offsets,
    })
}
