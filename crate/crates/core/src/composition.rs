//! Arrangement-agent stage: clip records, grouped selection, global storyline
//! composition and the duration loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::filtering;
use crate::gateway::Gateway;
use crate::par;
use crate::prompt::PromptSet;
use crate::text::{clip_ids, dedup_preserving, normalize_key};
use crate::types::{
    Clip, CompositionPlan, ContextualAttributes, FilterVerdict, StructuredDescription, Theme,
};
use crate::vars;

/// Used when the step-planning call is disabled or fails.
pub const STATIC_STEPS: &str = "\
1. Global concept: read every clip and decide what the footage is about and which story it can tell.
2. Clip selection: keep highlight clips with high scores, plus a few calmer clips that can open, close or bridge scenes; skip repeated or redundant content.
3. Composition arrangement: order the kept clips into a beginning, development and ending that flows naturally, even when that differs from recording order.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositionConfig {
    pub group_size: usize,
    /// Seconds.
    pub target_duration: f64,
    /// Composition calls allowed in the duration loop, including the first.
    pub max_iterations: u32,
    pub cot_enabled: bool,
    /// A plan may run up to `target_duration * duration_tolerance`.
    pub duration_tolerance: f64,
    pub reask_limit: u32,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            group_size: 20,
            target_duration: 60.0,
            max_iterations: 4,
            cot_enabled: true,
            duration_tolerance: 1.25,
            reask_limit: 2,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(self.target_duration > 0.0) {
            return Err(Error::Config("target_duration must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.duration_tolerance >= 1.0) {
            return Err(Error::Config("duration_tolerance must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_duration(&self) -> f64 {
        self.target_duration * self.duration_tolerance
    }
}

/// One clip as the arrangement agent sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: u32,
    pub highlight_flag: bool,
    pub score: f64,
    pub contextual: ContextualAttributes,
    pub raw_caption: String,
    /// Not rendered; used for ranking fallbacks.
    pub saliency: f64,
    /// Not rendered; seconds of source footage.
    pub duration: f64,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ClipRecord {
    pub fn new(desc: &StructuredDescription, verdict: &FilterVerdict, clip: &Clip) -> Self {
        Self {
            clip_id: desc.clip_id,
            highlight_flag: verdict.highlight_flag,
            score: verdict.score,
            contextual: desc.contextual.clone(),
            raw_caption: desc.raw_caption.clone(),
            saliency: filtering::saliency(desc),
            duration: clip.interval.len(),
        }
    }

    /// `Clip <id>, <flag> (<score>), What: ..; Where: ..; When: ..; Who: .., Caption: ..`
    pub fn render(&self) -> String {
        let flag = if self.highlight_flag {
            "Highlight"
        } else {
            "No Highlight"
        };
        let c = &self.contextual;
        format!(
            "Clip {}, {flag} ({:.2}), What: {}; Where: {}; When: {}; Who: {}, Caption: {}",
            self.clip_id,
            self.score,
            one_line(&c.what),
            one_line(&c.where_),
            one_line(&c.when),
            one_line(&c.who),
            one_line(&self.raw_caption),
        )
    }
}

/// Joins descriptions, verdicts and clip intervals by clip id.
pub fn build_records(
    descs: &[StructuredDescription],
    verdicts: &[FilterVerdict],
    clips: &[Clip],
) -> Result<Vec<ClipRecord>> {
    if descs.len() != verdicts.len() {
        return Err(Error::LengthMismatch {
            left: descs.len(),
            right: verdicts.len(),
        });
    }
    let by_id: HashMap<u32, &Clip> = clips.iter().map(|c| (c.clip_id, c)).collect();
    descs
        .iter()
        .zip(verdicts)
        .map(|(d, v)| {
            let clip = by_id
                .get(&d.clip_id)
                .ok_or(Error::PlanInconsistent(d.clip_id))?;
            Ok(ClipRecord::new(d, v, clip))
        })
        .collect()
}

/// The user input block: one rendered record per line in clip-id order.
pub fn render_input(records: &[ClipRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no clip records to render".into()));
    }
    let mut sorted: Vec<&ClipRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.clip_id);
    Ok(sorted
        .iter()
        .map(|r| r.render())
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreambleSource {
    Agent,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preamble {
    pub text: String,
    pub source: PreambleSource,
}

fn wrap_steps(steps: &str) -> String {
    format!("Follow these composition steps:\n{}", steps.trim())
}

/// Asks the agent for composition steps, falling back to [`STATIC_STEPS`].
pub fn build_cot_preamble(
    prompts: &PromptSet,
    gateway: &Gateway,
    cfg: &CompositionConfig,
) -> Preamble {
    let fallback = Preamble {
        text: wrap_steps(STATIC_STEPS),
        source: PreambleSource::Static,
    };
    if !cfg.cot_enabled {
        return fallback;
    }
    let prompt = match prompts.composition_intro.render(&vars! {
        "target_duration" => format!("{:.0}", cfg.target_duration),
    }) {
        Ok(p) => p,
        Err(e) => {
            warn!(error = %e, "composition intro prompt failed to render, using static steps");
            return fallback;
        }
    };
    match gateway.complete(&gateway.request().text(prompt)) {
        Ok(resp) if !resp.text.trim().is_empty() => Preamble {
            text: wrap_steps(&resp.text),
            source: PreambleSource::Agent,
        },
        Ok(_) => {
            warn!("empty composition steps, using static steps");
            fallback
        }
        Err(e) => {
            warn!(error = %e, "composition steps call failed, using static steps");
            fallback
        }
    }
}

/// Contiguous chunks of at most `group_size` ids, in order.
pub fn group(candidates: &[u32], cfg: &CompositionConfig) -> Vec<Vec<u32>> {
    candidates
        .chunks(cfg.group_size.max(1))
        .map(<[u32]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSelection {
    pub selected: Vec<u32>,
    pub themes: Vec<Theme>,
    pub fallback: bool,
    pub warnings: Vec<String>,
}

/// Ids the agent selected from a group reply, plus theme notes.
pub fn parse_selection(text: &str, group_ids: &[u32]) -> (Vec<u32>, Vec<Theme>, Vec<String>) {
    let lines = parse_lines(text);
    let allow_bare = !text_has_clip_tokens(text);
    let mut picked = Vec::new();
    let mut explicit = false;
    let mut themes = Vec::new();
    for line in &lines {
        match line.kind {
            LineKind::Order => {
                explicit = true;
                picked.extend(clip_ids(&line.value, allow_bare));
            }
            LineKind::Theme => themes.push(parse_theme(&line.value, allow_bare)),
            LineKind::Role if !explicit => picked.extend(clip_ids(&line.full, allow_bare)),
            _ => {}
        }
    }
    let allowed: HashSet<u32> = group_ids.iter().copied().collect();
    let mut warnings = Vec::new();
    let selected: Vec<u32> = dedup_preserving(picked)
        .into_iter()
        .filter(|id| {
            let ok = allowed.contains(id);
            if !ok {
                warnings.push(format!("dropped clip {id}: not in this group"));
            }
            ok
        })
        .collect();
    let themes = clean_themes(themes, &selected);
    (selected, themes, warnings)
}

fn top_by_score(records: &[&ClipRecord], fraction: f64) -> Vec<u32> {
    let keep = ((records.len() as f64 * fraction).ceil() as usize).max(1);
    let mut ranked: Vec<&&ClipRecord> = records.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.clip_id.cmp(&b.clip_id)));
    let mut ids: Vec<u32> = ranked.iter().take(keep).map(|r| r.clip_id).collect();
    ids.sort_unstable();
    ids
}

/// First-stage selection within one group.
pub fn compose_group(
    records: &[&ClipRecord],
    preamble: &Preamble,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<GroupSelection> {
    let owned: Vec<ClipRecord> = records.iter().map(|r| (*r).clone()).collect();
    let prompt = prompts.composition_group.render(&vars! {
        "steps" => preamble.text,
        "clip_count" => records.len(),
        "clips" => render_input(&owned)?,
    })?;
    let ids: Vec<u32> = records.iter().map(|r| r.clip_id).collect();
    let (selected, themes, mut warnings) = match gateway.complete(&gateway.request().text(prompt)) {
        Ok(resp) => parse_selection(&resp.text, &ids),
        Err(e) => (Vec::new(), Vec::new(), vec![format!("group call failed: {e}")]),
    };
    if selected.is_empty() {
        warnings.push("empty selection, keeping the top quarter by score".into());
        return Ok(GroupSelection {
            selected: top_by_score(records, 0.25),
            themes: Vec::new(),
            fallback: true,
            warnings,
        });
    }
    Ok(GroupSelection {
        selected,
        themes,
        fallback: false,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Storyline,
    Theme,
    Order,
    Role,
    Other,
}

struct Line {
    kind: LineKind,
    value: String,
    full: String,
}

fn text_has_clip_tokens(text: &str) -> bool {
    !clip_ids(text, false).is_empty()
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    // "1." / "2)" style numbering.
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(t.as_bytes().get(digits), Some(b'.') | Some(b')')) {
        let rest = &t[digits + 1..];
        if rest.starts_with(' ') {
            return rest.trim_start();
        }
    }
    t
}

/// Splits `Key: value` / `[Key]: value`; keys are short and digit-free.
fn split_key(line: &str) -> Option<(String, String)> {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix('[') {
        let close = rest.find(']')?;
        let after = rest[close + 1..].trim_start();
        let value = after.strip_prefix(':')?;
        return Some((rest[..close].to_string(), value.trim().to_string()));
    }
    let colon = line.find(':')?;
    let key = &line[..colon];
    if key.len() > 40 || key.bytes().any(|b| b.is_ascii_digit()) || key.trim().is_empty() {
        return None;
    }
    Some((key.to_string(), line[colon + 1..].trim().to_string()))
}

fn classify(key: &str) -> LineKind {
    let k = normalize_key(key.trim_matches(['*', '_']));
    let k = k.trim_matches(['*', '_', ' ']);
    if k.ends_with("storyline") || k == "story" || k == "narrative" {
        LineKind::Storyline
    } else if k.starts_with("theme") {
        LineKind::Theme
    } else if matches!(
        k,
        "selected" | "selection" | "sequence" | "order" | "final sequence" | "clip order"
            | "selected clips" | "playback order"
    ) {
        LineKind::Order
    } else {
        LineKind::Role
    }
}

fn parse_lines(text: &str) -> Vec<Line> {
    text.lines()
        .map(strip_bullet)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let full = l.trim_matches(['*', ' ']).to_string();
            match split_key(l) {
                Some((key, value)) => Line {
                    kind: classify(&key),
                    value,
                    full,
                },
                None => Line {
                    kind: if clip_ids(l, true).is_empty() {
                        LineKind::Other
                    } else {
                        LineKind::Role
                    },
                    value: l.to_string(),
                    full,
                },
            }
        })
        .collect()
}

fn parse_theme(value: &str, allow_bare: bool) -> Theme {
    let cut = value
        .find('(')
        .or_else(|| value.to_ascii_lowercase().find("clip"))
        .unwrap_or(value.len());
    let title = value[..cut]
        .trim()
        .trim_end_matches([':', '-', ','])
        .trim()
        .to_string();
    Theme {
        title,
        clip_ids: dedup_preserving(clip_ids(&value[cut..], allow_bare)),
    }
}

/// Themes restricted to `ordered`, each id in at most one theme.
fn clean_themes(themes: Vec<Theme>, ordered: &[u32]) -> Vec<Theme> {
    let allowed: HashSet<u32> = ordered.iter().copied().collect();
    let mut used = HashSet::new();
    themes
        .into_iter()
        .filter_map(|t| {
            let ids: Vec<u32> = t
                .clip_ids
                .into_iter()
                .filter(|id| allowed.contains(id) && used.insert(*id))
                .collect();
            (!ids.is_empty()).then(|| Theme {
                title: t.title,
                clip_ids: ids,
            })
        })
        .collect()
}

/// Parses a storyline reply into a plan restricted to `candidates`.
///
/// Accepts `Clip 12` and bare `12` id forms (bare ids only when the reply
/// never uses the `Clip` form). An explicit `[Sequence]` / `[Selected]` line
/// fixes the order; otherwise ids are taken from role lines in reading order.
pub fn parse_plan(text: &str, candidates: &[u32]) -> Result<CompositionPlan> {
    parse_plan_with_warnings(text, candidates).map(|(p, _)| p)
}

pub fn parse_plan_with_warnings(
    text: &str,
    candidates: &[u32],
) -> Result<(CompositionPlan, Vec<String>)> {
    let lines = parse_lines(text);
    let allow_bare = !text_has_clip_tokens(text);
    let mut storyline = Vec::new();
    let mut themes = Vec::new();
    let mut explicit: Option<Vec<u32>> = None;
    let mut role_ids = Vec::new();
    let mut roles: BTreeMap<u32, String> = BTreeMap::new();

    for line in &lines {
        match line.kind {
            LineKind::Storyline => storyline.push(line.value.clone()),
            LineKind::Theme => themes.push(parse_theme(&line.value, allow_bare)),
            LineKind::Order => {
                explicit
                    .get_or_insert_with(Vec::new)
                    .extend(clip_ids(&line.value, allow_bare));
            }
            LineKind::Role => {
                let ids = clip_ids(&line.full, allow_bare);
                for id in &ids {
                    roles.entry(*id).or_insert_with(|| line.full.clone());
                }
                role_ids.extend(ids);
            }
            LineKind::Other => {}
        }
    }

    let allowed: HashSet<u32> = candidates.iter().copied().collect();
    let mut warnings = Vec::new();
    let ordered: Vec<u32> = dedup_preserving(explicit.unwrap_or(role_ids))
        .into_iter()
        .filter(|id| {
            let ok = allowed.contains(id);
            if !ok {
                warnings.push(format!("dropped clip {id}: not a candidate"));
            }
            ok
        })
        .collect();
    if ordered.is_empty() {
        return Err(Error::ParseFailure("storyline reply names no candidate clip".into()));
    }
    let kept: HashSet<u32> = ordered.iter().copied().collect();
    roles.retain(|id, _| kept.contains(id));
    let plan = CompositionPlan {
        themes: clean_themes(themes, &ordered),
        ordered_clip_ids: ordered,
        clip_roles: roles,
        global_storyline: storyline.join(" "),
    };
    Ok((plan, warnings))
}

/// Top-saliency clips up to the target duration, in chronological order.
pub fn fallback_plan(records: &[ClipRecord], cfg: &CompositionConfig) -> CompositionPlan {
    let mut ranked: Vec<&ClipRecord> = records.iter().collect();
    ranked.sort_by(|a, b| b.saliency.total_cmp(&a.saliency).then(a.clip_id.cmp(&b.clip_id)));
    let mut total = 0.0;
    let mut chosen = Vec::new();
    for r in ranked {
        if !chosen.is_empty() && total + r.duration > cfg.target_duration + 1e-9 {
            continue;
        }
        total += r.duration;
        chosen.push(r.clip_id);
    }
    chosen.sort_unstable();
    let n = chosen.len();
    let clip_roles = chosen
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let role = match i {
                0 => "Beginning",
                _ if i + 1 == n => "Ending",
                _ => "Development",
            };
            (*id, format!("{role}: Clip {id} (selected by saliency)"))
        })
        .collect();
    CompositionPlan {
        ordered_clip_ids: chosen,
        clip_roles,
        themes: Vec::new(),
        global_storyline: "Highest-saliency clips in recording order.".into(),
    }
}

pub fn plan_duration(plan: &CompositionPlan, durations: &HashMap<u32, f64>) -> f64 {
    plan.ordered_clip_ids
        .iter()
        .map(|id| durations.get(id).copied().unwrap_or(0.0))
        .sum()
}

/// Drops the lowest-score clip (the later one on ties) until the plan fits.
fn truncate_plan(
    plan: &mut CompositionPlan,
    records: &HashMap<u32, &ClipRecord>,
    max_duration: f64,
) -> Vec<u32> {
    let durations: HashMap<u32, f64> = records.iter().map(|(k, r)| (*k, r.duration)).collect();
    let mut dropped = Vec::new();
    while plan.ordered_clip_ids.len() > 1 && plan_duration(plan, &durations) > max_duration + 1e-9 {
        let (pos, _) = plan
            .ordered_clip_ids
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| {
                let sa = records[a].score;
                let sb = records[b].score;
                sa.total_cmp(&sb).then(ib.cmp(ia))
            })
            .expect("plan is non-empty");
        dropped.push(plan.ordered_clip_ids.remove(pos));
    }
    let kept: Vec<u32> = plan.ordered_clip_ids.clone();
    let kept_set: HashSet<u32> = kept.iter().copied().collect();
    plan.clip_roles.retain(|id, _| kept_set.contains(id));
    plan.themes = clean_themes(std::mem::take(&mut plan.themes), &kept);
    dropped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    pub plan: CompositionPlan,
    /// Composition calls made in the duration loop.
    pub iterations: u32,
    pub fallback: bool,
    pub truncated: Vec<u32>,
    pub warnings: Vec<String>,
}

/// Second-stage composition over the selected records, iterated until the
/// plan fits `target_duration * duration_tolerance`.
pub fn compose_final(
    records: &[ClipRecord],
    preamble: &Preamble,
    prompts: &PromptSet,
    cfg: &CompositionConfig,
    gateway: &Gateway,
) -> Result<FinalOutcome> {
    if records.is_empty() {
        return Err(Error::EmptySelection);
    }
    let candidates: Vec<u32> = records.iter().map(|r| r.clip_id).collect();
    let by_id: HashMap<u32, &ClipRecord> = records.iter().map(|r| (r.clip_id, r)).collect();
    let durations: HashMap<u32, f64> = records.iter().map(|r| (r.clip_id, r.duration)).collect();
    let mean_clip = records.iter().map(|r| r.duration).sum::<f64>() / records.len() as f64;

    let prompt = prompts.composition_global.render(&vars! {
        "steps" => preamble.text,
        "clip_count" => records.len(),
        "clips" => render_input(records)?,
        "target_duration" => format!("{:.0}", cfg.target_duration),
        "clip_duration" => format!("{:.0}", mean_clip),
    })?;
    let base = gateway.request().text(prompt);

    let mut warnings = Vec::new();
    let mut request = base.clone();
    let mut iterations = 0;
    let mut plan: Option<CompositionPlan> = None;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let Some((reply, parsed)) = ask_for_plan(&request, &candidates, prompts, cfg, gateway, &mut warnings)
        else {
            break;
        };
        let duration = plan_duration(&parsed, &durations);
        plan = Some(parsed);
        if duration <= cfg.max_duration() + 1e-9 {
            break;
        }
        let current = plan.as_ref().map_or(0, |p| p.ordered_clip_ids.len());
        let max_clips = ((cfg.target_duration / mean_clip).floor() as usize).max(1);
        let tighten = prompts.composition_tighten.render(&vars! {
            "current_duration" => format!("{duration:.0}"),
            "current_count" => current,
            "target_duration" => format!("{:.0}", cfg.target_duration),
            "max_clips" => max_clips,
        })?;
        request = base
            .clone()
            .text(format!("Previous arrangement:\n{}", reply.trim()))
            .text(tighten);
    }

    let Some(mut plan) = plan else {
        warnings.push("no usable storyline, using top-saliency fallback".into());
        return Ok(FinalOutcome {
            plan: fallback_plan(records, cfg),
            iterations,
            fallback: true,
            truncated: Vec::new(),
            warnings,
        });
    };
    let truncated = truncate_plan(&mut plan, &by_id, cfg.max_duration());
    if !truncated.is_empty() {
        warnings.push(format!("truncated plan, dropped clips {truncated:?}"));
    }
    Ok(FinalOutcome {
        plan,
        iterations,
        fallback: false,
        truncated,
        warnings,
    })
}

/// One composition call with format re-asks. `None` when the agent is
/// unreachable or never produces a parseable plan.
fn ask_for_plan(
    request: &crate::gateway::AgentRequest,
    candidates: &[u32],
    prompts: &PromptSet,
    cfg: &CompositionConfig,
    gateway: &Gateway,
    warnings: &mut Vec<String>,
) -> Option<(String, CompositionPlan)> {
    let mut req = request.clone();
    for attempt in 0..=cfg.reask_limit {
        let reply = match gateway.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                warnings.push(format!("composition call failed: {e}"));
                return None;
            }
        };
        match parse_plan_with_warnings(&reply, candidates) {
            Ok((plan, w)) => {
                warnings.extend(w);
                return Some((reply, plan));
            }
            Err(e) => {
                warnings.push(format!("attempt {}: {e}", attempt + 1));
                req = request.clone().text(format!(
                    "Attempt {}. Your previous reply was:\n{}\n\n{}",
                    attempt + 2,
                    reply.trim(),
                    prompts.format_reminder.body.trim()
                ));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionOutcome {
    pub plan: CompositionPlan,
    pub preamble: Preamble,
    pub groups: Vec<Vec<u32>>,
    /// Ids passed to the global stage.
    pub shortlisted: Vec<u32>,
    pub group_themes: Vec<Theme>,
    pub iterations: u32,
    pub fallback: bool,
    pub truncated: Vec<u32>,
    pub warnings: Vec<String>,
}

/// Full two-stage composition over the candidate records (the filtered set).
pub fn compose(
    records: &[ClipRecord],
    prompts: &PromptSet,
    gateway: &Gateway,
    cfg: &CompositionConfig,
) -> Result<CompositionOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut sorted: Vec<&ClipRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.clip_id);
    let candidates: Vec<u32> = sorted.iter().map(|r| r.clip_id).collect();
    let by_id: HashMap<u32, &ClipRecord> = sorted.iter().map(|r| (r.clip_id, *r)).collect();

    let preamble = build_cot_preamble(prompts, gateway, cfg);
    let groups = group(&candidates, cfg);
    let mut warnings = Vec::new();
    let mut group_themes = Vec::new();

    let shortlisted: Vec<u32> = if groups.len() <= 1 {
        candidates.clone()
    } else {
        let selections = par::map_blocking(&groups, gateway.config().in_flight, |ids| {
            let members: Vec<&ClipRecord> = ids.iter().map(|id| by_id[id]).collect();
            compose_group(&members, &preamble, prompts, gateway)
        });
        let mut ids = Vec::new();
        for (i, sel) in selections.into_iter().enumerate() {
            let sel = sel?;
            for w in sel.warnings {
                warnings.push(format!("group {}: {w}", i + 1));
            }
            ids.extend(sel.selected);
            group_themes.extend(sel.themes);
        }
        dedup_preserving(ids)
    };

    let finalists: Vec<ClipRecord> = shortlisted.iter().map(|id| by_id[id].clone()).collect();
    let outcome = compose_final(&finalists, &preamble, prompts, cfg, gateway)?;
    warnings.extend(outcome.warnings);
    outcome.plan.validate(&candidates)?;
    for w in &warnings {
        warn!("{w}");
    }
    Ok(CompositionOutcome {
        plan: outcome.plan,
        preamble,
        groups,
        shortlisted,
        group_themes,
        iterations: outcome.iterations,
        fallback: outcome.fallback,
        truncated: outcome.truncated,
        warnings,
    })
}

/// Multi-level storyline text: global story, themes, then clip-wise roles.
pub fn render_storyline(plan: &CompositionPlan, clips: &[Clip]) -> String {
    let by_id: HashMap<u32, &Clip> = clips.iter().map(|c| (c.clip_id, c)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "Global storyline");
    let _ = writeln!(out, "  {}", plan.global_storyline);
    if !plan.themes.is_empty() {
        let _ = writeln!(out, "\nThemes");
        for t in &plan.themes {
            let ids: Vec<String> = t.clip_ids.iter().map(|i| format!("Clip {i}")).collect();
            let _ = writeln!(out, "  - {}: {}", t.title, ids.join(", "));
        }
    }
    let _ = writeln!(out, "\nClips");
    for (i, id) in plan.ordered_clip_ids.iter().enumerate() {
        let span = by_id
            .get(id)
            .map(|c| format!("{} {:.1}-{:.1}s", c.source, c.interval.start, c.interval.end))
            .unwrap_or_default();
        let role = plan.clip_roles.get(id).map(String::as_str).unwrap_or("");
        let _ = writeln!(out, "  {:>2}. Clip {id} [{span}] {role}", i + 1);
    }
    out
}
