use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{AgentRequest, Gateway};
use crate::media::Frame;
use crate::prompt::PromptTemplate;
use crate::text::{normalize_key, split_bracketed};
use crate::types::{Criterion, CriterionScore, EvaluationReport};

/// Evaluation prompt followed by the final cut's keyframes in playback order.
pub fn build_eval_request(
    frames: &[Frame],
    template: &PromptTemplate,
    base: &AgentRequest,
) -> Result<AgentRequest> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("final cut has no keyframes".into()));
    }
    let mut req = base.clone().text(template.render(&BTreeMap::new())?);
    for f in frames {
        req = req.image(f.media_type.clone(), f.read()?);
    }
    Ok(req)
}

fn criterion_for(key: &str) -> Option<Criterion> {
    let k = normalize_key(key);
    Criterion::ALL
        .into_iter()
        .find(|c| normalize_key(c.label()) == k)
        .or(match k.as_str() {
            "wasted footage" | "amount of waste" | "waste" => Some(Criterion::WastedFootage),
            "exciting segment" | "excitement" => Some(Criterion::ExcitingSegments),
            "richness" => Some(Criterion::MaterialRichness),
            _ => None,
        })
}

/// `reason (3.5)` → (`reason`, 3.5), using the last parenthesized number.
fn split_score(value: &str) -> Option<(String, f64)> {
    let mut search = value.len();
    while let Some(open) = value[..search].rfind('(') {
        if let Some(close) = value[open..].find(')') {
            if let Ok(score) = value[open + 1..open + close].trim().parse::<f64>() {
                if score.is_finite() {
                    let reason = value[..open].trim().trim_end_matches([',', ':', '-']).trim();
                    return Some((reason.to_string(), score));
                }
            }
        }
        search = open;
    }
    None
}

/// Parses `[Criterion]: reason (score);` for all four criteria. Scores are
/// clamped to `[1, 5]`.
pub fn parse_eval_report(text: &str) -> Result<EvaluationReport> {
    let mut criteria = BTreeMap::new();
    for (key, value) in split_bracketed(text) {
        let Some(c) = criterion_for(&key) else { continue };
        if criteria.contains_key(&c) {
            continue;
        }
        let Some((reason, score)) = split_score(&value) else { continue };
        criteria.insert(
            c,
            CriterionScore {
                score: score.clamp(1.0, 5.0),
                reason,
            },
        );
    }
    let missing: Vec<&str> = Criterion::ALL
        .iter()
        .filter(|c| !criteria.contains_key(c))
        .map(|c| c.label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::ParseFailure(format!(
            "evaluation reply lacks {}",
            missing.join(", ")
        )));
    }
    let average = criteria.values().map(|s| s.score).sum::<f64>() / criteria.len() as f64;
    Ok(EvaluationReport { criteria, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvaluation {
    /// `None` when every attempt failed to parse; the report is then invalid.
    pub report: Option<EvaluationReport>,
    pub attempts: u32,
    pub replies: Vec<String>,
}

impl AgentEvaluation {
    pub fn is_valid(&self) -> bool {
        self.report.is_some()
    }
}

/// Runs the evaluation agent with up to `reask_limit` format re-asks.
pub fn evaluate_cut(
    gateway: &Gateway,
    request: &AgentRequest,
    reminder: &str,
    reask_limit: u32,
) -> Result<AgentEvaluation> {
    let mut replies = Vec::new();
    let mut req = request.clone();
    for attempt in 0..=reask_limit {
        let text = gateway.complete(&req)?.text;
        let parsed = parse_eval_report(&text);
        replies.push(text.clone());
        if let Ok(report) = parsed {
            return Ok(AgentEvaluation {
                report: Some(report),
                attempts: attempt + 1,
                replies,
            });
        }
        req = request.clone().text(format!(
            "Attempt {}. Your previous reply was:\n{}\n\n{}",
            attempt + 2,
            text.trim(),
            reminder.trim()
        ));
    }
    Ok(AgentEvaluation {
        report: None,
        attempts: reask_limit + 1,
        replies,
    })
}
