//! Dynamic filtering of clips and signed saliency scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::types::{FilterVerdict, SaliencyTrack, StructuredDescription};

/// Score attributes in canonical order. [`ScoreKey::Highlight`] comes last,
/// which decides ties in [`dynamic_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreKey {
    Occlusion,
    Jittering,
    Overexposure,
    Meaningless,
    Highlight,
}

impl ScoreKey {
    pub const CANONICAL: [ScoreKey; 5] = [
        ScoreKey::Occlusion,
        ScoreKey::Jittering,
        ScoreKey::Overexposure,
        ScoreKey::Meaningless,
        ScoreKey::Highlight,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScoreKey::Occlusion => "Occlusion",
            ScoreKey::Jittering => "Jittering",
            ScoreKey::Overexposure => "Overexposure",
            ScoreKey::Meaningless => "Meaningless",
            ScoreKey::Highlight => "Highlight",
        }
    }

    /// Case-insensitive match on the label.
    pub fn parse(key: &str) -> Option<Self> {
        let k = key.trim();
        Self::CANONICAL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(k))
    }
}

/// Scans `(key, num)` pairs keeping the last maximum (`num >= score`).
///
/// If the winning key is `Highlight` the clip is a highlight; otherwise it is
/// filtered unless every score is zero.
pub fn dynamic_filter(keys: &[ScoreKey], nums: &[f64]) -> Result<FilterVerdict> {
    if keys.len() != nums.len() {
        return Err(Error::LengthMismatch {
            left: keys.len(),
            right: nums.len(),
        });
    }
    if keys.is_empty() {
        return Err(Error::InvalidInput("dynamic filter needs at least one key".into()));
    }
    if let Some(bad) = nums.iter().find(|n| !(**n >= 0.0)) {
        return Err(Error::InvalidInput(format!("score {bad} is negative or NaN")));
    }

    let mut score = 0.0;
    let mut max_key = None;
    for (&key, &num) in keys.iter().zip(nums) {
        if num >= score {
            score = num;
            max_key = Some(key);
        }
    }
    Ok(if max_key == Some(ScoreKey::Highlight) {
        FilterVerdict {
            filter_flag: false,
            highlight_flag: true,
            score,
        }
    } else {
        FilterVerdict {
            filter_flag: score != 0.0,
            highlight_flag: false,
            score,
        }
    })
}

pub fn canonical_scores(desc: &StructuredDescription) -> [f64; 5] {
    let [o, j, x, m] = desc.defects.as_array();
    [o, j, x, m, desc.highlight]
}

/// Verdict for one clip with keys in canonical order.
pub fn verdict(desc: &StructuredDescription) -> FilterVerdict {
    let scores = canonical_scores(desc).map(|s| if s.is_nan() { 0.0 } else { s.max(0.0) });
    dynamic_filter(&ScoreKey::CANONICAL, &scores)
        .expect("canonical keys and clamped scores are always valid")
}

/// `S_h` when it beats every defect, otherwise `S_h - max(S_d)`.
pub fn saliency(desc: &StructuredDescription) -> f64 {
    let worst = desc.defects.max();
    if desc.highlight > worst {
        desc.highlight
    } else {
        desc.highlight - worst
    }
}

pub fn verdicts(descs: &[StructuredDescription]) -> Vec<FilterVerdict> {
    par::map_ordered(descs, verdict)
}

pub fn saliency_track(descs: &[StructuredDescription]) -> SaliencyTrack {
    let values = par::map_ordered(descs, saliency);
    SaliencyTrack {
        values: descs.iter().map(|d| d.clip_id).zip(values).collect(),
    }
}

/// Ids whose verdict keeps the clip, in clip-id order.
pub fn select_valid(descs: &[StructuredDescription], verdicts: &[FilterVerdict]) -> Result<Vec<u32>> {
    if descs.len() != verdicts.len() {
        return Err(Error::LengthMismatch {
            left: descs.len(),
            right: verdicts.len(),
        });
    }
    let mut ids: Vec<u32> = descs
        .iter()
        .zip(verdicts)
        .filter(|(_, v)| !v.filter_flag)
        .map(|(d, _)| d.clip_id)
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(ids)
}

/// Per-clip filter output as persisted by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub clip_id: u32,
    #[serde(flatten)]
    pub verdict: FilterVerdict,
    pub saliency: f64,
}

pub fn records(descs: &[StructuredDescription]) -> Vec<VerdictRecord> {
    descs
        .iter()
        .zip(verdicts(descs))
        .map(|(d, v)| VerdictRecord {
            clip_id: d.clip_id,
            verdict: v,
            saliency: saliency(d),
        })
        .collect()
}
