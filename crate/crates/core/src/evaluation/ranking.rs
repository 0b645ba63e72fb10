use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotation, Rank};

/// Default share of shots an annotator's scores mark as positive.
pub const TOP5_FRACTION: f64 = 0.5;

/// Predicted scores and binary ground truth for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRanking {
    pub video_id: String,
    pub clip_ids: Vec<u32>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl SaliencyRanking {
    pub fn validate(&self) -> Result<()> {
        if self.clip_ids.len() != self.scores.len() {
            return Err(Error::LengthMismatch {
                left: self.clip_ids.len(),
                right: self.scores.len(),
            });
        }
        if self.scores.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                left: self.scores.len(),
                right: self.labels.len(),
            });
        }
        Ok(())
    }

    pub fn average_precision(&self) -> Result<f64> {
        self.validate()?;
        average_precision_ids(&self.clip_ids, &self.scores, &self.labels)
    }
}

/// AP with ids `0..n`; see [`average_precision_ids`].
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let ids: Vec<u32> = (0..scores.len() as u32).collect();
    average_precision_ids(&ids, scores, labels)
}

/// Ranked-retrieval AP: sort by score descending, ties by ascending id, and
/// average the precision at the rank of every positive.
pub fn average_precision_ids(ids: &[u32], scores: &[f64], labels: &[bool]) -> Result<f64> {
    if ids.len() != scores.len() || scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Undefined("no positive labels".into()));
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    /// `None` for videos without a positive label.
    pub per_video: Vec<(String, Option<f64>)>,
}

impl MapSummary {
    pub fn skipped(&self) -> usize {
        self.per_video.iter().filter(|(_, ap)| ap.is_none()).count()
    }
}

/// Mean AP over videos; videos without positives are skipped.
pub fn map_over_videos(rankings: &[SaliencyRanking]) -> Result<MapSummary> {
    let per_video = crate::par::map_ordered(rankings, |r| {
        r.validate()?;
        match r.average_precision() {
            Ok(ap) => Ok((r.video_id.clone(), Some(ap))),
            Err(Error::Undefined(_)) => Ok((r.video_id.clone(), None)),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let aps: Vec<f64> = per_video.iter().filter_map(|(_, ap)| *ap).collect();
    if aps.is_empty() {
        return Err(Error::Undefined("no video has a positive label".into()));
    }
    Ok(MapSummary {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        per_video,
    })
}

/// Marks the top `ceil(n * fraction)` scores (at least one) as positive,
/// ties broken by position.
pub fn binarize_top(scores: &[f64], fraction: f64) -> Vec<bool> {
    let n = scores.len();
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![false; n];
    for &i in order.iter().take(k) {
        labels[i] = true;
    }
    labels
}

/// Multi-annotator protocol: per video, binarize every annotator at
/// `fraction`, score the prediction against each, average the five best APs,
/// then average over videos.
pub fn top5_map(videos: &[(Vec<f64>, Vec<Vec<f64>>)], fraction: f64) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::InvalidInput("no videos".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("top fraction must be in (0, 1]".into()));
    }
    let per_video = crate::par::map_ordered(videos, |(pred, annotators)| {
        if annotators.is_empty() {
            return Err(Error::InvalidInput("video without annotators".into()));
        }
        let mut aps = annotators
            .iter()
            .map(|ann| {
                if ann.len() != pred.len() {
                    return Err(Error::LengthMismatch {
                        left: pred.len(),
                        right: ann.len(),
                    });
                }
                average_precision(pred, &binarize_top(ann, fraction))
            })
            .collect::<Result<Vec<f64>>>()?;
        aps.sort_by(|a, b| b.total_cmp(a));
        aps.truncate(5);
        Ok(aps.iter().sum::<f64>() / aps.len() as f64)
    });
    let vals = per_video.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Share of selected clips annotated as wasted (rank 0) and as highlights
/// (rank 3).
pub fn waste_highlight_precision(selected: &[u32], annotations: &[Annotation]) -> Result<(f64, f64)> {
    if selected.is_empty() {
        return Err(Error::InvalidInput("no selected clips".into()));
    }
    let mut waste = 0usize;
    let mut high = 0usize;
    for id in selected {
        let rank = annotations
            .iter()
            .find_map(|a| a.ranks.get(id))
            .ok_or_else(|| Error::InvalidInput(format!("clip {id} is not annotated")))?;
        match rank {
            Rank::Wasted => waste += 1,
            Rank::Highlight => high += 1,
            _ => {}
        }
    }
    let n = selected.len() as f64;
    Ok((waste as f64 / n, high as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!(close(ap, (1.0 + 2.0 / 3.0) / 2.0));
        assert!(close(average_precision(&[0.1, 0.5, 0.3], &[true; 3]).unwrap(), 1.0));
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert!(close(ap, 0.25));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn ap_ties_use_ids() {
        // Equal scores: the lower id ranks first.
        let ap = average_precision_ids(&[2, 1], &[0.5, 0.5], &[true, false]).unwrap();
        assert!(close(ap, 0.5));
        let ap = average_precision_ids(&[1, 2], &[0.5, 0.5], &[true, false]).unwrap();
        assert!(close(ap, 1.0));
    }

    fn ranking(id: &str, scores: &[f64], labels: &[bool]) -> SaliencyRanking {
        SaliencyRanking {
            video_id: id.into(),
            clip_ids: (1..=scores.len() as u32).collect(),
            scores: scores.to_vec(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn map_means_and_skips() {
        let a = ranking("a", &[0.9, 0.8, 0.7], &[true, false, true]);
        let b = ranking("b", &[0.9, 0.8], &[false, true]);
        let c = ranking("c", &[0.9], &[false]);
        let s = map_over_videos(&[a, b, c]).unwrap();
        assert!(close(s.map, ((1.0 + 2.0 / 3.0) / 2.0 + 0.5) / 2.0));
        assert_eq!(s.skipped(), 1);
    }

    #[test]
    fn top5_cases() {
        let pred = vec![0.9, 0.1, 0.5, 0.3];
        let ann = vec![1.0, 0.0, 0.8, 0.1];
        let single = top5_map(&[(pred.clone(), vec![ann.clone()])], 0.5).unwrap();
        let direct = average_precision(&pred, &binarize_top(&ann, 0.5)).unwrap();
        assert!(close(single, direct));
        assert!(close(single, 1.0));
        // Seven annotators, only the best five count.
        let bad = vec![0.0, 1.0, 0.0, 0.9];
        let mut anns = vec![ann.clone(); 5];
        anns.extend(vec![bad.clone(); 2]);
        assert!(close(top5_map(&[(pred.clone(), anns)], 0.5).unwrap(), 1.0));
    }

    #[test]
    fn binarize() {
        assert_eq!(binarize_top(&[0.1, 0.9, 0.5], 0.5), vec![false, true, true]);
        assert_eq!(binarize_top(&[0.2, 0.2], 0.1), vec![true, false]);
    }

    #[test]
    fn precision_counts() {
        let ranks: BTreeMap<u32, Rank> = [
            (1, Rank::Wasted),
            (2, Rank::Normal),
            (3, Rank::Highlight),
            (4, Rank::Highlight),
        ]
        .into();
        let ann = vec![Annotation {
            video_id: "v".into(),
            ranks,
        }];
        assert_eq!(waste_highlight_precision(&[1, 2, 3, 4], &ann).unwrap(), (0.25, 0.5));
        assert_eq!(waste_highlight_precision(&[3, 4], &ann).unwrap(), (0.0, 1.0));
        assert_eq!(waste_highlight_precision(&[1], &ann).unwrap(), (1.0, 0.0));
        assert!(waste_highlight_precision(&[9], &ann).is_err());
    }
}
