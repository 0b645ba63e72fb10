//! Job configuration, the per-job artifact layout and the stage functions
//! that read and write it.
//!
//! Each stage reads the previous stage's files from the job directory, so
//! stages can be re-run independently. Layout:
//!
//! ```text
//! <job>/clips.json            segmentation, keyframe paths, ingest exclusions
//! <job>/cost.json             token and price estimate
//! <job>/frames/<video>/...    extracted keyframes
//! <job>/descriptions.jsonl    one StructuredDescription per line
//! <job>/structuring_log.json  exclusions and parse warnings
//! <job>/verdicts.json         filter verdict and saliency per clip
//! <job>/saliency.json         SaliencyTrack
//! <job>/plan.json             CompositionPlan
//! <job>/storyline.txt         readable storyline
//! <job>/composition_log.json  groups, iterations, fallbacks, warnings
//! <job>/final_cut.mp4         rendered cut (real sources only)
//! <job>/manifest.json         rendered segments
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::assembly::{self, Manifest};
use crate::composition::{self, ClipRecord, CompositionConfig, CompositionOutcome};
use crate::error::{Error, Result};
use crate::evaluation::{self, AgentEvaluation, MetricsReport};
use crate::filtering::{self, VerdictRecord};
use crate::gateway::{Backend, FixtureBackend, Gateway, GatewayConfig, HttpBackend};
use crate::ingest::{self, CostReport, IngestConfig, Pricing};
use crate::media::{write_file, Frame, FrameExtractor, FrameStore, Renderer};
use crate::prompt::PromptSet;
use crate::structuring::{self, ClipFrames, Exclusion, ExclusionReason, StructuringConfig};
use crate::types::{
    validate_job, Clip, CompositionPlan, SaliencyTrack, SourceVideo, StructuredDescription,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub top5_fraction: f64,
    pub reask_limit: u32,
    /// Keyframes per second sampled from the final cut for the evaluation agent.
    pub sample_rate: f64,
    pub max_frames: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            top5_fraction: crate::evaluation::TOP5_FRACTION,
            reask_limit: 2,
            sample_rate: 0.5,
            max_frames: 40,
        }
    }
}

/// Every tunable of a job; each section defaults independently.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    pub ingest: IngestConfig,
    pub structuring: StructuringConfig,
    pub composition: CompositionConfig,
    pub gateway: GatewayConfig,
    pub pricing: Pricing,
    pub evaluation: EvaluationConfig,
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.composition.validate()?;
        self.gateway.validate()?;
        if !(0.0..=1.0).contains(&self.structuring.failure_fraction) {
            return Err(Error::Config("failure_fraction must be in [0, 1]".into()));
        }
        if !(self.evaluation.top5_fraction > 0.0 && self.evaluation.top5_fraction <= 1.0) {
            return Err(Error::Config("top5_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A job file: the sources plus configuration sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFile {
    pub sources: Vec<SourceVideo>,
    #[serde(flatten)]
    pub config: JobConfig,
}

/// Paths inside a job output directory.
#[derive(Debug, Clone)]
pub struct JobDir {
    pub root: PathBuf,
}

macro_rules! artifact {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl JobDir {
            $(pub fn $name(&self) -> PathBuf { self.root.join($file) })*
        }
    };
}

artifact! {
    clips => "clips.json",
    cost => "cost.json",
    frames => "frames",
    descriptions => "descriptions.jsonl",
    structuring_log => "structuring_log.json",
    verdicts => "verdicts.json",
    saliency => "saliency.json",
    plan => "plan.json",
    storyline => "storyline.txt",
    composition_log => "composition_log.json",
    final_cut => "final_cut.mp4",
    manifest => "manifest.json",
    metrics => "metrics",
}

impl JobDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingStage { stage, path })
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, e.to_string()))
}

/// Contents of `clips.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub sources: Vec<SourceVideo>,
    pub clips: Vec<Clip>,
    pub frames: BTreeMap<u32, Vec<Frame>>,
    pub excluded: Vec<Exclusion>,
}

impl IngestRecord {
    pub fn clip_frames(&self) -> Vec<ClipFrames> {
        self.clips
            .iter()
            .filter_map(|c| {
                Some(ClipFrames {
                    clip: c.clone(),
                    frames: self.frames.get(&c.clip_id)?.clone(),
                })
            })
            .collect()
    }
}

pub fn ingest_stage(
    job: &JobFile,
    dir: &JobDir,
    extractor: &dyn FrameExtractor,
) -> Result<(IngestRecord, CostReport)> {
    let validated = validate_job(&job.sources, &job.config)?;
    let cfg = &job.config.ingest;
    let clips = validated.clips(cfg)?;
    let store = FrameStore::new(dir.frames());
    let extracted = ingest::extract_all(&clips, &job.sources, cfg, extractor, &store)?;
    let cost = ingest::estimate_cost(&clips, &job.config.pricing, job.config.structuring.mode);
    let record = IngestRecord {
        sources: job.sources.clone(),
        clips,
        frames: extracted.frames,
        excluded: extracted
            .excluded
            .into_iter()
            .map(|(clip_id, msg)| Exclusion {
                clip_id,
                reason: ExclusionReason::Ingest(msg),
            })
            .collect(),
    };
    write_json(&dir.clips(), &record)?;
    write_json(&dir.cost(), &cost)?;
    info!(
        clips = record.clips.len(),
        keyframes = cost.keyframes,
        usd = cost.usd,
        "ingest done"
    );
    Ok((record, cost))
}

pub fn load_ingest(dir: &JobDir) -> Result<IngestRecord> {
    read_json(&dir.require(dir.clips(), "ingest")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuringLog {
    pub described: usize,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<(u32, String)>,
}

pub fn structure_stage(
    dir: &JobDir,
    config: &JobConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<Vec<StructuredDescription>> {
    let ingest = load_ingest(dir)?;
    let outcome =
        structuring::structure_job(&ingest.clip_frames(), prompts, gateway, &config.structuring)?;
    structuring::write_jsonl(&dir.descriptions(), &outcome.descriptions)?;
    let mut excluded = ingest.excluded.clone();
    excluded.extend(outcome.excluded);
    write_json(
        &dir.structuring_log(),
        &StructuringLog {
            described: outcome.descriptions.len(),
            excluded,
            warnings: outcome.warnings,
        },
    )?;
    info!(described = outcome.descriptions.len(), "structuring done");
    Ok(outcome.descriptions)
}

pub fn load_descriptions(dir: &JobDir) -> Result<Vec<StructuredDescription>> {
    structuring::read_jsonl(&dir.require(dir.descriptions(), "structure")?)
}

pub fn filter_stage(dir: &JobDir) -> Result<Vec<VerdictRecord>> {
    let descs = load_descriptions(dir)?;
    let records = filtering::records(&descs);
    write_json(&dir.verdicts(), &records)?;
    write_json(&dir.saliency(), &filtering::saliency_track(&descs))?;
    let kept = records.iter().filter(|r| !r.verdict.filter_flag).count();
    info!(kept, total = records.len(), "filtering done");
    Ok(records)
}

pub fn load_verdicts(dir: &JobDir) -> Result<Vec<VerdictRecord>> {
    read_json(&dir.require(dir.verdicts(), "filter")?)
}

pub fn load_saliency(dir: &JobDir) -> Result<SaliencyTrack> {
    read_json(&dir.require(dir.saliency(), "filter")?)
}

/// Composition diagnostics written next to the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionLog {
    pub candidates: Vec<u32>,
    /// Set when no clip passed the filter and the plan was chosen by saliency.
    pub empty_selection: bool,
    pub outcome: Option<CompositionOutcome>,
}

pub fn compose_stage(
    dir: &JobDir,
    config: &JobConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<CompositionPlan> {
    let ingest = load_ingest(dir)?;
    let descs = load_descriptions(dir)?;
    let verdicts = load_verdicts(dir)?;
    if verdicts.len() != descs.len()
        || verdicts.iter().zip(&descs).any(|(v, d)| v.clip_id != d.clip_id)
    {
        return Err(Error::InvalidInput(
            "verdicts.json does not match descriptions.jsonl; re-run filter".into(),
        ));
    }
    let plain: Vec<_> = verdicts.iter().map(|v| v.verdict).collect();
    let records = composition::build_records(&descs, &plain, &ingest.clips)?;
    let cfg = &config.composition;

    let (plan, log) = match filtering::select_valid(&descs, &plain) {
        Ok(valid) => {
            let candidates: Vec<ClipRecord> = records
                .iter()
                .filter(|r| valid.contains(&r.clip_id))
                .cloned()
                .collect();
            let outcome = composition::compose(&candidates, prompts, gateway, cfg)?;
            let plan = outcome.plan.clone();
            (
                plan,
                CompositionLog {
                    candidates: valid,
                    empty_selection: false,
                    outcome: Some(outcome),
                },
            )
        }
        Err(Error::EmptySelection) => {
            tracing::warn!("no clip passed the filter, selecting by saliency");
            if records.is_empty() {
                return Err(Error::EmptySelection);
            }
            (
                composition::fallback_plan(&records, cfg),
                CompositionLog {
                    candidates: Vec::new(),
                    empty_selection: true,
                    outcome: None,
                },
            )
        }
        Err(e) => return Err(e),
    };
    write_json(&dir.plan(), &plan)?;
    write_file(
        &dir.storyline(),
        composition::render_storyline(&plan, &ingest.clips).as_bytes(),
    )?;
    write_json(&dir.composition_log(), &log)?;
    info!(clips = plan.ordered_clip_ids.len(), "composition done");
    Ok(plan)
}

pub fn load_plan(dir: &JobDir) -> Result<CompositionPlan> {
    read_json(&dir.require(dir.plan(), "compose")?)
}

pub fn render_stage(dir: &JobDir, renderer: &dyn Renderer) -> Result<Manifest> {
    let ingest = load_ingest(dir)?;
    let plan = load_plan(dir)?;
    let segments = assembly::plan_to_intervals(&plan, &ingest.clips)?;
    let manifest = assembly::render(&segments, &ingest.sources, renderer, &dir.final_cut())?;
    write_json(&dir.manifest(), &manifest)?;
    info!(
        segments = manifest.segments.len(),
        seconds = manifest.rendered_duration,
        "render done"
    );
    Ok(manifest)
}

pub fn load_manifest(dir: &JobDir) -> Result<Manifest> {
    Manifest::read(&dir.require(dir.manifest(), "render")?)
}

/// Runs every stage in order.
pub fn trim(
    job: &JobFile,
    dir: &JobDir,
    prompts: &PromptSet,
    gateway: &Gateway,
    extractor: &dyn FrameExtractor,
    renderer: &dyn Renderer,
) -> Result<Manifest> {
    job.config.validate()?;
    ingest_stage(job, dir, extractor)?;
    structure_stage(dir, &job.config, prompts, gateway)?;
    filter_stage(dir)?;
    compose_stage(dir, &job.config, prompts, gateway)?;
    render_stage(dir, renderer)
}

/// Keyframes of the final cut at `sample_rate` per second, capped at
/// `max_frames` by even subsampling. Read from the sources, not the render.
pub fn cut_frames(
    manifest: &Manifest,
    sources: &[SourceVideo],
    cfg: &EvaluationConfig,
    short_side: u32,
    extractor: &dyn FrameExtractor,
    store: &FrameStore,
) -> Result<Vec<Frame>> {
    let mut wanted: Vec<(&SourceVideo, f64)> = Vec::new();
    for seg in &manifest.segments {
        let source = sources
            .iter()
            .find(|s| s.video_id == seg.video_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown source `{}`", seg.video_id)))?;
        let n = ingest::keyframe_count(seg.end - seg.start, cfg.sample_rate);
        for k in 0..n {
            wanted.push((source, seg.start + k as f64 / cfg.sample_rate.max(f64::MIN_POSITIVE)));
        }
    }
    if wanted.len() > cfg.max_frames && cfg.max_frames > 0 {
        let step = wanted.len() as f64 / cfg.max_frames as f64;
        wanted = (0..cfg.max_frames)
            .map(|i| wanted[(i as f64 * step) as usize])
            .collect();
    }
    wanted
        .into_iter()
        .map(|(source, t)| {
            let path = store.path(&source.video_id, t, short_side, extractor.extension(source));
            if !path.exists() {
                extractor.extract(source, t, short_side, &path)?;
            }
            Ok(Frame {
                timestamp: t,
                path,
                media_type: extractor.media_type(source).to_string(),
            })
        })
        .collect()
}

/// Runs the evaluation agent on the rendered cut and writes
/// `metrics/agent.{json,txt}`.
pub fn agent_evaluation_stage(
    dir: &JobDir,
    config: &JobConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
    extractor: &dyn FrameExtractor,
) -> Result<AgentEvaluation> {
    let ingest = load_ingest(dir)?;
    let manifest = load_manifest(dir)?;
    let store = FrameStore::new(dir.frames());
    let frames = cut_frames(
        &manifest,
        &ingest.sources,
        &config.evaluation,
        config.ingest.resize_short_side,
        extractor,
        &store,
    )?;
    let request = evaluation::build_eval_request(&frames, &prompts.evaluation, &gateway.request())?;
    let outcome = evaluation::evaluate_cut(
        gateway,
        &request,
        &prompts.format_reminder.body,
        config.evaluation.reask_limit,
    )?;
    let mut report = MetricsReport::new("agent");
    match &outcome.report {
        Some(r) => {
            for (criterion, score) in &r.criteria {
                report.push(criterion.label(), Some(score.score));
            }
            report.push("average", Some(r.average));
        }
        None => {
            report.note("evaluation reply could not be parsed; report invalid");
        }
    }
    report.write(&dir.metrics(), "agent")?;
    write_json(&dir.metrics().join("agent_replies.json"), &outcome)?;
    Ok(outcome)
}

/// Where agent replies come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// HTTP endpoint from the environment.
    Live,
    /// Recorded fixtures only; a miss is an error.
    Mock { fixtures: PathBuf },
    /// Recorded fixtures first, live endpoint on a miss.
    Replay { fixtures: PathBuf },
}

pub fn build_gateway(
    choice: &BackendChoice,
    config: &GatewayConfig,
    cache_dir: Option<&Path>,
) -> Result<Gateway> {
    config.validate()?;
    let timeout = Duration::from_secs(config.timeout_secs);
    let backend: Box<dyn Backend> = match choice {
        BackendChoice::Live => Box::new(HttpBackend::from_env(timeout)?),
        BackendChoice::Mock { fixtures } => Box::new(FixtureBackend::strict(fixtures)),
        BackendChoice::Replay { fixtures } => Box::new(FixtureBackend::with_fallback(
            fixtures,
            Box::new(HttpBackend::from_env(timeout)?),
        )),
    };
    let gateway = Gateway::new(backend, config.clone());
    Ok(match cache_dir {
        Some(dir) => gateway.with_cache(dir),
        None => gateway,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = JobConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.ingest.clip_duration, 3.0);
        assert_eq!(cfg.composition.target_duration, 60.0);
        let mut bad = cfg.clone();
        bad.gateway.in_flight = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn job_file_json_round_trip() {
        let job = JobFile {
            sources: vec![SourceVideo {
                video_id: "a".into(),
                uri: "synthetic:a".into(),
                duration: 9.0,
                frame_rate: 30.0,
            }],
            config: JobConfig::default(),
        };
        let json = serde_json::to_string(&job).unwrap();
        assert_eq!(serde_json::from_str::<JobFile>(&json).unwrap(), job);
        let minimal: JobFile = serde_json::from_str(
            r#"{"sources":[{"video_id":"a","uri":"synthetic:a","duration":9}],"composition":{"group_size":5}}"#,
        )
        .unwrap();
        assert_eq!(minimal.config.composition.group_size, 5);
        assert_eq!(minimal.config.composition.target_duration, 60.0);
    }

    #[test]
    fn missing_stage_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let jd = JobDir::new(dir.path());
        assert!(matches!(
            load_plan(&jd),
            Err(Error::MissingStage { stage: "compose", .. })
        ));
        assert!(matches!(
            filter_stage(&jd),
            Err(Error::MissingStage { stage: "structure", .. })
        ));
    }
}
