//! On-disk inputs for evaluation: rank annotations (JSONL), highlight
//! datasets (JSON), paired scores (JSON) and embeddings (text rows).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ranking::SaliencyRanking;
use crate::error::{Error, Result};
use crate::types::{Annotation, Rank, SaliencyTrack};

/// One line of an annotation file. `clip_index` is the job-global clip id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub clip_index: u32,
    pub start: f64,
    pub end: f64,
    pub rank: Rank,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses JSONL annotation records, grouped per video in first-seen order.
/// Each video's clip indices must form a gap-free range.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_video: BTreeMap<String, BTreeMap<u32, Rank>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line)
            .map_err(|e| Error::schema(path, format!("line {}: {e}", n + 1)))?;
        if !(rec.start >= 0.0 && rec.end > rec.start) {
            return Err(Error::schema(
                path,
                format!("line {}: invalid interval {}..{}", n + 1, rec.start, rec.end),
            ));
        }
        if !by_video.contains_key(&rec.video_id) {
            order.push(rec.video_id.clone());
        }
        let ranks = by_video.entry(rec.video_id.clone()).or_default();
        if ranks.insert(rec.clip_index, rec.rank).is_some() {
            return Err(Error::schema(
                path,
                format!("line {}: clip {} annotated twice", n + 1, rec.clip_index),
            ));
        }
    }
    if order.is_empty() {
        return Err(Error::schema(path, "no annotation records"));
    }
    let mut out = Vec::with_capacity(order.len());
    for video_id in order {
        let ranks = by_video.remove(&video_id).expect("video seen");
        let first = *ranks.keys().next().expect("non-empty");
        if let Some((expected, _)) = ranks
            .keys()
            .enumerate()
            .map(|(i, id)| (first + i as u32, *id))
            .find(|(want, got)| want != got)
        {
            return Err(Error::schema(
                path,
                format!("video `{video_id}`: missing clip entry {expected}"),
            ));
        }
        out.push(Annotation { video_id, ranks });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    parse_annotations(&read(path)?, path)
}

/// Highlight-detection dataset: per video, predicted scores plus either
/// binary labels, annotator score rows, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdDataset {
    pub videos: Vec<HdVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdVideo {
    pub video_id: String,
    /// Defaults to `1..=n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_ids: Option<Vec<u32>>,
    pub scores: Vec<f64>,
    /// Non-zero entries are positives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotators: Option<Vec<Vec<f64>>>,
}

impl HdDataset {
    /// Videos that carry binary labels.
    pub fn rankings(&self) -> Vec<SaliencyRanking> {
        self.videos
            .iter()
            .filter_map(|v| {
                let labels = v.labels.as_ref()?;
                Some(SaliencyRanking {
                    video_id: v.video_id.clone(),
                    clip_ids: v
                        .clip_ids
                        .clone()
                        .unwrap_or_else(|| (1..=v.scores.len() as u32).collect()),
                    scores: v.scores.clone(),
                    labels: labels.iter().map(|l| *l != 0).collect(),
                })
            })
            .collect()
    }

    /// `(prediction, annotator rows)` for videos that carry annotators.
    pub fn multi_annotator(&self) -> Vec<(Vec<f64>, Vec<Vec<f64>>)> {
        self.videos
            .iter()
            .filter_map(|v| Some((v.scores.clone(), v.annotators.clone()?)))
            .collect()
    }
}

pub fn load_hd_dataset(path: &Path) -> Result<HdDataset> {
    let ds: HdDataset =
        serde_json::from_str(&read(path)?).map_err(|e| Error::schema(path, e.to_string()))?;
    for v in &ds.videos {
        let n = v.scores.len();
        let bad = v.clip_ids.as_ref().is_some_and(|c| c.len() != n)
            || v.labels.as_ref().is_some_and(|l| l.len() != n)
            || v.annotators.as_ref().is_some_and(|a| a.iter().any(|r| r.len() != n));
        if bad {
            return Err(Error::schema(
                path,
                format!("video `{}`: row lengths differ from scores", v.video_id),
            ));
        }
        if v.labels.is_none() && v.annotators.is_none() {
            return Err(Error::schema(
                path,
                format!("video `{}` has neither labels nor annotators", v.video_id),
            ));
        }
    }
    Ok(ds)
}

/// Pairs predicted saliency with annotations; rank 3 marks a positive.
pub fn rankings_from_annotations(
    saliency: &SaliencyTrack,
    annotations: &[Annotation],
) -> Result<Vec<SaliencyRanking>> {
    annotations
        .iter()
        .map(|a| {
            let clip_ids: Vec<u32> = a.ranks.keys().copied().collect();
            let scores = clip_ids
                .iter()
                .map(|id| {
                    saliency.values.get(id).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("no saliency for annotated clip {id}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(SaliencyRanking {
                video_id: a.video_id.clone(),
                labels: a.ranks.values().map(|r| *r == Rank::Highlight).collect(),
                clip_ids,
                scores,
            })
        })
        .collect()
}

/// Agent and human scores for the same items, in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePairs {
    pub agent: Vec<f64>,
    pub human: Vec<f64>,
}

pub fn load_score_pairs(path: &Path) -> Result<ScorePairs> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::schema(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

/// `dim N` header, then one whitespace-separated row of N floats per line.
/// Blank lines and `#` comments are ignored.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<Embeddings> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::schema(path, "empty embeddings file"))?;
    let dim: usize = header
        .strip_prefix("dim")
        .and_then(|d| d.trim().parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::schema(path, format!("bad header `{header}`, expected `dim N`")))?;
    let mut rows = Vec::new();
    for (n, line) in lines {
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::schema(path, format!("line {n}: {e}")))?;
        if row.len() != dim {
            return Err(Error::schema(
                path,
                format!("line {n}: {} values, header says {dim}", row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(Embeddings { dim, rows })
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    parse_embeddings(&read(path)?, path)
}
