//! Maps a composition plan back onto source time and renders the final cut.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{CutSegment, Renderer};
use crate::types::{Clip, CompositionPlan, SourceVideo, TimeInterval};

const ADJACENT_EPS: f64 = 1e-6;

/// Source intervals in plan order. Consecutive plan entries that continue
/// each other in the same source are merged into one segment.
pub fn plan_to_intervals(plan: &CompositionPlan, clips: &[Clip]) -> Result<Vec<CutSegment>> {
    let by_id: HashMap<u32, &Clip> = clips.iter().map(|c| (c.clip_id, c)).collect();
    let mut out: Vec<CutSegment> = Vec::new();
    for id in &plan.ordered_clip_ids {
        let clip = by_id.get(id).ok_or(Error::PlanInconsistent(*id))?;
        if let Some(last) = out.last_mut() {
            if last.video_id == clip.source
                && (last.interval.end - clip.interval.start).abs() < ADJACENT_EPS
            {
                last.interval.end = clip.interval.end;
                last.clip_ids.push(*id);
                continue;
            }
        }
        out.push(CutSegment {
            video_id: clip.source.clone(),
            interval: clip.interval,
            clip_ids: vec![*id],
        });
    }
    Ok(out)
}

pub fn total_length(segments: &[CutSegment]) -> f64 {
    segments.iter().map(|s| s.interval.len()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub uri: String,
    pub start: f64,
    pub end: f64,
    pub clip_ids: Vec<u32>,
}

/// JSON sidecar written next to the final cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub output: PathBuf,
    /// Sum of segment lengths.
    pub planned_duration: f64,
    /// Duration reported by the renderer.
    pub rendered_duration: f64,
    pub segments: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn intervals(&self) -> Vec<(String, TimeInterval)> {
        self.segments
            .iter()
            .map(|e| {
                (
                    e.video_id.clone(),
                    TimeInterval {
                        start: e.start,
                        end: e.end,
                    },
                )
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        crate::media::write_file(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, e.to_string()))
    }
}

/// Renders `segments` to `output` and returns the manifest describing it.
pub fn render(
    segments: &[CutSegment],
    sources: &[SourceVideo],
    renderer: &dyn Renderer,
    output: &Path,
) -> Result<Manifest> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("no intervals to render".into()));
    }
    let by_id: HashMap<&str, &SourceVideo> =
        sources.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let mut pairs = Vec::with_capacity(segments.len());
    for seg in segments {
        let source = by_id.get(seg.video_id.as_str()).ok_or_else(|| Error::Render {
            video_id: seg.video_id.clone(),
            start: seg.interval.start,
            end: seg.interval.end,
            message: "unknown source".into(),
        })?;
        if seg.interval.start < -ADJACENT_EPS || seg.interval.end > source.duration + ADJACENT_EPS {
            return Err(Error::Render {
                video_id: seg.video_id.clone(),
                start: seg.interval.start,
                end: seg.interval.end,
                message: format!("outside source duration {}", source.duration),
            });
        }
        pairs.push((seg.clone(), *source));
    }
    let rendered_duration = renderer.render(&pairs, output)?;
    Ok(Manifest {
        output: output.to_path_buf(),
        planned_duration: total_length(segments),
        rendered_duration,
        segments: pairs
            .iter()
            .map(|(seg, src)| ManifestEntry {
                video_id: seg.video_id.clone(),
                uri: src.uri.clone(),
                start: seg.interval.start,
                end: seg.interval.end,
                clip_ids: seg.clip_ids.clone(),
            })
            .collect(),
    })
}
