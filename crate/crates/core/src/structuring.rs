//! Captioning-agent stage: prompts per clip, gateway calls, and parsing of the
//! `[Key]: value` replies into [`StructuredDescription`] records.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::filtering::ScoreKey;
use crate::gateway::{AgentRequest, Gateway};
use crate::ingest::PromptMode;
use crate::media::Frame;
use crate::par;
use crate::prompt::{PromptSet, PromptTemplate};
use crate::text::{normalize_key, split_bracketed, truncate_chars};
use crate::types::{
    Clip, ContextualAttributes, DefectScores, StructuredDescription, CONTEXT_FIELD_MAX_CHARS,
};
use crate::vars;

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    /// Numeric value, clamped to `[0, 1]`.
    Number(f64),
    Text(String),
}

/// Parses `[Key]: value; [Key]: value ...` into ordered pairs.
///
/// Decimal values are clamped to `[0, 1]`; anything else is kept as text.
pub fn parse_attribute_line(text: &str) -> Result<Vec<(String, AttrValue)>> {
    let pairs = split_bracketed(text);
    if pairs.is_empty() {
        return Err(Error::ParseFailure(format!(
            "no `[key]: value` pair in {:?}",
            truncate_chars(text, 80)
        )));
    }
    Ok(pairs
        .into_iter()
        .map(|(k, v)| {
            let value = match v.parse::<f64>() {
                Ok(x) if x.is_finite() => AttrValue::Number(x.clamp(0.0, 1.0)),
                _ => AttrValue::Text(v),
            };
            (k, value)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Caption,
    What,
    Where,
    When,
    Who,
    Score(ScoreKey),
}

fn field_for(key: &str) -> Option<Field> {
    let k = normalize_key(key);
    Some(match k.as_str() {
        "raw caption" | "caption" => Field::Caption,
        "what" => Field::What,
        "where" => Field::Where,
        "when" => Field::When,
        "who" => Field::Who,
        _ => Field::Score(ScoreKey::parse(&k)?),
    })
}

/// A parsed record plus the defaults that had to be filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDescription {
    pub description: StructuredDescription,
    pub warnings: Vec<String>,
}

/// Extracts a [`StructuredDescription`] from a captioning reply.
///
/// Missing scores default to 0 with a warning, missing text fields to empty.
/// Fails when none of the expected keys is present.
pub fn parse_structured_description(text: &str, clip_id: u32) -> Result<ParsedDescription> {
    let pairs = parse_attribute_line(text)?;
    let mut caption = None;
    let mut ctx: [Option<String>; 4] = Default::default();
    let mut scores: BTreeMap<ScoreKey, f64> = BTreeMap::new();
    let mut warnings = Vec::new();

    for (key, value) in pairs {
        let Some(field) = field_for(&key) else {
            continue;
        };
        let as_text = |v: &AttrValue| match v {
            AttrValue::Text(t) => t.clone(),
            AttrValue::Number(x) => x.to_string(),
        };
        match field {
            Field::Caption => caption = Some(as_text(&value)),
            Field::What => ctx[0] = Some(as_text(&value)),
            Field::Where => ctx[1] = Some(as_text(&value)),
            Field::When => ctx[2] = Some(as_text(&value)),
            Field::Who => ctx[3] = Some(as_text(&value)),
            Field::Score(k) => match value {
                AttrValue::Number(x) => {
                    scores.insert(k, x);
                }
                AttrValue::Text(t) => {
                    warnings.push(format!("[{}] has non-numeric value {t:?}", k.label()));
                }
            },
        }
    }

    if caption.is_none() && ctx.iter().all(Option::is_none) && scores.is_empty() {
        return Err(Error::ParseFailure(format!(
            "clip {clip_id}: reply has none of the expected keys"
        )));
    }

    let mut score = |k: ScoreKey| {
        scores.get(&k).copied().unwrap_or_else(|| {
            warnings.push(format!("[{}] missing, defaulting to 0.0", k.label()));
            0.0
        })
    };
    let defects = DefectScores {
        occlusion: score(ScoreKey::Occlusion),
        jittering: score(ScoreKey::Jittering),
        overexposure: score(ScoreKey::Overexposure),
        meaningless: score(ScoreKey::Meaningless),
    };
    let highlight = score(ScoreKey::Highlight);
    let [what, where_, when, who] = ctx.map(|f| truncate_chars(&f.unwrap_or_default(), CONTEXT_FIELD_MAX_CHARS));

    Ok(ParsedDescription {
        description: StructuredDescription {
            clip_id,
            raw_caption: caption.unwrap_or_default(),
            contextual: ContextualAttributes {
                what,
                where_,
                when,
                who,
            },
            defects,
            highlight,
        },
        warnings,
    })
}

/// Renders a record in the reply format the captioning prompt asks for.
pub fn to_attribute_text(d: &StructuredDescription) -> String {
    format!(
        "[Raw Caption]: {}\n[What]: {}\n[Where]: {}\n[When]: {}\n[Who]: {}\n\
         [Occlusion]: {}; [Jittering]: {}; [Overexposure]: {}; [Meaningless]: {}; [Highlight]: {}",
        d.raw_caption,
        d.contextual.what,
        d.contextual.where_,
        d.contextual.when,
        d.contextual.who,
        d.defects.occlusion,
        d.defects.jittering,
        d.defects.overexposure,
        d.defects.meaningless,
        d.highlight,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuringConfig {
    pub mode: PromptMode,
    /// Re-asks with a format reminder after an unparseable reply.
    pub reask_limit: u32,
    /// Job fails when more than this fraction of clips cannot reach the agent.
    pub failure_fraction: f64,
}

impl Default for StructuringConfig {
    fn default() -> Self {
        Self {
            mode: PromptMode::Unified,
            reask_limit: 2,
            failure_fraction: 0.2,
        }
    }
}

/// A clip with its extracted keyframes.
#[derive(Debug, Clone)]
pub struct ClipFrames {
    pub clip: Clip,
    pub frames: Vec<Frame>,
}

fn render_for_clip(template: &PromptTemplate, input: &ClipFrames) -> Result<String> {
    let c = &input.clip;
    template.render(&vars! {
        "clip_id" => c.clip_id,
        "video_id" => c.source,
        "start" => format!("{:.1}", c.interval.start),
        "end" => format!("{:.1}", c.interval.end),
        "keyframe_count" => input.frames.len(),
    })
}

/// One request: the rendered instruction followed by every keyframe in
/// temporal order.
pub fn build_structuring_request(
    input: &ClipFrames,
    template: &PromptTemplate,
    base: &AgentRequest,
) -> Result<AgentRequest> {
    if input.frames.is_empty() {
        return Err(Error::InvalidInput(format!(
            "clip {} has no keyframes",
            input.clip.clip_id
        )));
    }
    let mut req = base.clone().text(render_for_clip(template, input)?);
    let mut frames: Vec<&Frame> = input.frames.iter().collect();
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    for f in frames {
        req = req.image(f.media_type.clone(), f.read()?);
    }
    Ok(req)
}

/// All requests for one clip under `mode`: one unified request, or separate
/// caption, context and defect requests each carrying every keyframe.
pub fn build_requests(
    input: &ClipFrames,
    prompts: &PromptSet,
    mode: PromptMode,
    base: &AgentRequest,
) -> Result<Vec<AgentRequest>> {
    match mode {
        PromptMode::Unified => Ok(vec![build_structuring_request(
            input,
            &prompts.structuring_unified,
            base,
        )?]),
        PromptMode::Isolated => [
            &prompts.structuring_caption,
            &prompts.structuring_context,
            &prompts.structuring_defects,
        ]
        .into_iter()
        .map(|t| build_structuring_request(input, t, base))
        .collect(),
    }
}

fn with_reminder(req: &AgentRequest, reminder: &str, previous: &str, attempt: u32) -> AgentRequest {
    req.clone().text(format!(
        "Attempt {attempt}. Your previous reply was:\n{previous}\n\n{reminder}"
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ExclusionReason {
    InvalidStructuring(String),
    AgentFailure(String),
    Ingest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub clip_id: u32,
    pub reason: ExclusionReason,
}

enum ClipOutcome {
    Ok(ParsedDescription),
    Invalid(String),
    Failed(Error),
}

fn structure_clip(
    input: &ClipFrames,
    prompts: &PromptSet,
    gateway: &Gateway,
    cfg: &StructuringConfig,
) -> ClipOutcome {
    let requests = match build_requests(input, prompts, cfg.mode, &gateway.request()) {
        Ok(r) => r,
        Err(e) => return ClipOutcome::Invalid(e.to_string()),
    };
    let mut replies: Vec<String> = Vec::new();
    let mut last_error = String::new();
    for attempt in 0..=cfg.reask_limit {
        let mut texts = Vec::with_capacity(requests.len());
        for (i, req) in requests.iter().enumerate() {
            let req = if attempt == 0 {
                req.clone()
            } else {
                with_reminder(req, &prompts.format_reminder.body, &replies[i], attempt + 1)
            };
            match gateway.complete(&req) {
                Ok(resp) => texts.push(resp.text),
                Err(e) => return ClipOutcome::Failed(e),
            }
        }
        let combined = texts.join("\n");
        match parse_structured_description(&combined, input.clip.clip_id) {
            Ok(parsed) => return ClipOutcome::Ok(parsed),
            Err(e) => {
                last_error = e.to_string();
                replies = texts;
            }
        }
    }
    ClipOutcome::Invalid(last_error)
}

#[derive(Debug, Clone, Default)]
pub struct StructuringOutcome {
    /// Sorted by clip id.
    pub descriptions: Vec<StructuredDescription>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<(u32, String)>,
}

/// Structures every clip concurrently and merges the results by clip id.
pub fn structure_job(
    inputs: &[ClipFrames],
    prompts: &PromptSet,
    gateway: &Gateway,
    cfg: &StructuringConfig,
) -> Result<StructuringOutcome> {
    let results = par::map_blocking(inputs, gateway.config().in_flight, |input| structure_clip(input, prompts, gateway, cfg));

    let mut out = StructuringOutcome::default();
    let mut failures = 0usize;
    for (input, result) in inputs.iter().zip(results) {
        let clip_id = input.clip.clip_id;
        match result {
            ClipOutcome::Ok(parsed) => {
                for w in parsed.warnings {
                    warn!(clip_id, "{w}");
                    out.warnings.push((clip_id, w));
                }
                out.descriptions.push(parsed.description);
            }
            ClipOutcome::Invalid(reason) => {
                warn!(clip_id, %reason, "clip excluded: invalid structuring");
                out.excluded.push(Exclusion {
                    clip_id,
                    reason: ExclusionReason::InvalidStructuring(reason),
                });
            }
            ClipOutcome::Failed(e @ Error::Config(_)) => return Err(e),
            ClipOutcome::Failed(e) => {
                warn!(clip_id, error = %e, "clip excluded: agent failure");
                failures += 1;
                out.excluded.push(Exclusion {
                    clip_id,
                    reason: ExclusionReason::AgentFailure(e.to_string()),
                });
            }
        }
    }
    if !inputs.is_empty() && failures as f64 > cfg.failure_fraction * inputs.len() as f64 {
        return Err(Error::AgentUnavailable(format!(
            "{failures} of {} clips could not be structured",
            inputs.len()
        )));
    }
    out.descriptions.sort_by_key(|d| d.clip_id);
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::media::write_file(path, &buf)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::schema(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendError, FnBackend, GatewayConfig};
    use crate::media::{FrameStore, SyntheticMedia};
    use crate::types::{Keyframe, SourceVideo, TimeInterval};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    const EXAMPLE_LINE: &str =
        "[Occlusion]: 0.8; [Jittering]: 0.7; [Overexposure]: 0.0; [Meaningless]: 0.0; [Highlight]: 0.9";

    #[test]
    fn parses_reference_line() {
        let pairs = parse_attribute_line(EXAMPLE_LINE).unwrap();
        let expect = [
            ("Occlusion", 0.8),
            ("Jittering", 0.7),
            ("Overexposure", 0.0),
            ("Meaningless", 0.0),
            ("Highlight", 0.9),
        ];
        assert_eq!(pairs.len(), 5);
        for ((k, v), (ek, ev)) in pairs.iter().zip(expect) {
            assert_eq!(k, ek);
            assert_eq!(*v, AttrValue::Number(ev));
        }
    }

    #[test]
    fn clamps_out_of_range() {
        assert_eq!(
            parse_attribute_line("[Highlight]: 1.7").unwrap(),
            vec![("Highlight".to_string(), AttrValue::Number(1.0))]
        );
        assert_eq!(
            parse_attribute_line("[Highlight]: -0.2").unwrap()[0].1,
            AttrValue::Number(0.0)
        );
    }

    #[test]
    fn rejects_text_without_pairs() {
        assert!(matches!(
            parse_attribute_line("no brackets here"),
            Err(Error::ParseFailure(_))
        ));
    }

    #[test]
    fn keys_case_insensitive() {
        let p = parse_structured_description("[ highlight ]: 0.4; [OCCLUSION]: 0.1", 3).unwrap();
        assert_eq!(p.description.highlight, 0.4);
        assert_eq!(p.description.defects.occlusion, 0.1);
    }

    fn full_reply() -> String {
        "[Raw Caption]: A surfer rides a large wave toward the shore.\n\
         [What]: surfing\n[Where]: beach\n[When]: afternoon\n[Who]: a surfer\n\
         [Occlusion]: 0.0; [Jittering]: 0.2; [Overexposure]: 0.1; [Meaningless]: 0.0; [Highlight]: 0.85"
            .to_string()
    }

    #[test]
    fn full_record() {
        let p = parse_structured_description(&full_reply(), 5).unwrap();
        assert!(p.warnings.is_empty());
        let d = p.description;
        assert_eq!(d.clip_id, 5);
        assert_eq!(d.raw_caption, "A surfer rides a large wave toward the shore.");
        assert_eq!(d.contextual.where_, "beach");
        assert_eq!(d.defects.jittering, 0.2);
        assert_eq!(d.highlight, 0.85);
    }

    #[test]
    fn missing_score_defaults_with_warning() {
        let reply = full_reply().replace("[Overexposure]: 0.1; ", "");
        let p = parse_structured_description(&reply, 1).unwrap();
        assert_eq!(p.description.defects.overexposure, 0.0);
        assert_eq!(p.warnings.len(), 1);
        assert!(p.warnings[0].contains("Overexposure"));
    }

    #[test]
    fn long_context_truncated() {
        let reply = format!("[What]: {}", "x".repeat(300));
        let p = parse_structured_description(&reply, 1).unwrap();
        assert_eq!(p.description.contextual.what.chars().count(), CONTEXT_FIELD_MAX_CHARS);
    }

    #[test]
    fn round_trip_sample() {
        let d = parse_structured_description(&full_reply(), 9).unwrap().description;
        let again = parse_structured_description(&to_attribute_text(&d), 9).unwrap();
        assert_eq!(again.description, d);
        assert!(again.warnings.is_empty());
    }

    fn clip_inputs(dir: &Path, n: u32) -> Vec<ClipFrames> {
        let store = FrameStore::new(dir);
        let source = SourceVideo {
            video_id: "v".into(),
            uri: "synthetic:v".into(),
            duration: 3.0 * n as f64,
            frame_rate: 30.0,
        };
        (1..=n)
            .map(|id| {
                let start = 3.0 * (id - 1) as f64;
                let clip = Clip {
                    clip_id: id,
                    source: "v".into(),
                    interval: TimeInterval::new(start, start + 3.0).unwrap(),
                    keyframes: (0..3).map(|k| Keyframe { timestamp: start + k as f64 }).collect(),
                };
                let frames = crate::ingest::extract_keyframes(
                    &clip,
                    &source,
                    &Default::default(),
                    &SyntheticMedia,
                    &store,
                )
                .unwrap();
                ClipFrames { clip, frames }
            })
            .collect()
    }

    fn quick() -> GatewayConfig {
        GatewayConfig {
            backoff_ms: 1,
            retry_limit: 1,
            ..Default::default()
        }
    }

    fn clip_of(req: &AgentRequest) -> u32 {
        let text = req.text_parts().next().unwrap();
        let line = text.lines().find(|l| l.starts_with("Clip ID:")).unwrap();
        line["Clip ID:".len()..].trim().parse().unwrap()
    }

    #[test]
    fn request_layout() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 1);
        let set = PromptSet::builtin();
        let req = build_structuring_request(&inputs[0], &set.structuring_unified, &AgentRequest::new("m"))
            .unwrap();
        assert_eq!(req.parts.len(), 4);
        assert!(matches!(req.parts[0], crate::gateway::Part::Text(_)));
        assert_eq!(req.image_count(), 3);

        let mut tail = inputs[0].clone();
        tail.frames.truncate(1);
        let req = build_structuring_request(&tail, &set.structuring_unified, &AgentRequest::new("m"))
            .unwrap();
        assert_eq!((req.parts.len(), req.image_count()), (2, 1));

        let isolated = build_requests(&inputs[0], &set, PromptMode::Isolated, &AgentRequest::new("m")).unwrap();
        assert_eq!(isolated.len(), 3);
        assert!(isolated.iter().all(|r| r.image_count() == 3));
    }

    #[test]
    fn job_sorted_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 4);
        let gw = Gateway::new(
            Box::new(FnBackend(|r: &AgentRequest| {
                let id = clip_of(r);
                std::thread::sleep(std::time::Duration::from_millis((5 - id as u64) * 2));
                Ok(format!("[Raw Caption]: clip {id}; [Highlight]: 0.5"))
            })),
            quick(),
        );
        let out = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap();
        let ids: Vec<u32> = out.descriptions.iter().map(|d| d.clip_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn unparseable_clip_excluded_after_reasks() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 10);
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let gw = Gateway::new(
            Box::new(FnBackend(move |r: &AgentRequest| {
                if clip_of(r) == 4 {
                    c.fetch_add(1, Ordering::SeqCst);
                    Ok("I cannot see anything useful.".to_string())
                } else {
                    Ok(full_reply())
                }
            })),
            quick(),
        );
        let out = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap();
        assert_eq!(out.descriptions.len(), 9);
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].clip_id, 4);
        assert!(matches!(out.excluded[0].reason, ExclusionReason::InvalidStructuring(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn reask_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 1);
        let gw = Gateway::new(
            Box::new(FnBackend(|r: &AgentRequest| {
                if r.text_parts().count() > 1 {
                    Ok(full_reply())
                } else {
                    Ok("sorry".to_string())
                }
            })),
            quick(),
        );
        let out = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap();
        assert_eq!(out.descriptions.len(), 1);
    }

    #[test]
    fn empty_replies_exclude_clip() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 1);
        let gw = Gateway::new(Box::new(FnBackend(|_: &AgentRequest| Ok(String::new()))), quick());
        let out = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap();
        assert!(out.descriptions.is_empty());
        assert_eq!(out.excluded.len(), 1);
    }

    #[test]
    fn transport_failures_over_threshold_fail_job() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 10);
        let gw = Gateway::new(
            Box::new(FnBackend(|r: &AgentRequest| {
                if clip_of(r) % 2 == 0 {
                    Err(BackendError::Transport("down".into()))
                } else {
                    Ok(full_reply())
                }
            })),
            quick(),
        );
        let err = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::AgentUnavailable(_)));
    }

    #[test]
    fn one_transport_failure_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = clip_inputs(dir.path(), 10);
        let gw = Gateway::new(
            Box::new(FnBackend(|r: &AgentRequest| {
                if clip_of(r) == 7 {
                    Err(BackendError::Transport("down".into()))
                } else {
                    Ok(full_reply())
                }
            })),
            quick(),
        );
        let out = structure_job(&inputs, &PromptSet::builtin(), &gw, &Default::default()).unwrap();
        assert_eq!(out.descriptions.len(), 9);
        assert!(matches!(out.excluded[0].reason, ExclusionReason::AgentFailure(_)));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = parse_structured_description(&full_reply(), 2).unwrap().description;
        write_jsonl(&path, &[d.clone()]).unwrap();
        assert_eq!(read_jsonl::<StructuredDescription>(&path).unwrap(), vec![d]);
    }
}
