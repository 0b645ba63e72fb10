use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use vtrim::evaluation::{self, MetricsReport};
use vtrim::media::AutoMedia;
use vtrim::pipeline::{self, JobDir};

use crate::AgentArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Highlight detection: mAP and Top-5 mAP.
    Hd,
    /// Trimming precision: waste and highlight ratios of the plan.
    Vt,
    /// Evaluation agent on the final cut.
    Agent,
    /// Pearson, Spearman and Kendall tau-b between agent and human scores.
    Correlation,
    /// Cosine similarity of mean-pooled embeddings.
    Fidelity,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    agent: AgentArgs,
    /// Rank annotations (JSONL).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Highlight dataset (JSON) with predicted scores and labels or annotators.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Saliency file; defaults to `<out>/saliency.json`.
    #[arg(long)]
    saliency: Option<PathBuf>,
    /// Plan file; defaults to `<out>/plan.json`.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Paired agent/human scores (JSON with `agent` and `human` arrays).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Embeddings of the final cut.
    #[arg(long)]
    final_emb: Option<PathBuf>,
    /// Embeddings of the raw footage.
    #[arg(long)]
    raw_emb: Option<PathBuf>,
    /// Parse a saved evaluation-agent reply instead of calling the agent.
    #[arg(long)]
    reply: Option<PathBuf>,
    /// Share of shots each annotator marks positive for Top-5 mAP.
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Where to write `<mode>.json` / `<mode>.txt`; defaults to `<out>/metrics`
    /// when `<out>` exists.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn need<'a>(opt: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a PathBuf> {
    opt.as_ref()
        .with_context(|| format!("--mode {mode} needs {flag}"))
}

fn opt_metric(r: vtrim::Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(vtrim::Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let dir = JobDir::new(&args.agent.job.out);
    let fraction = args.top_fraction.unwrap_or(evaluation::TOP5_FRACTION);
    let (name, report) = match args.mode {
        Mode::Hd => ("hd", hd(args, &dir, fraction)?),
        Mode::Vt => ("vt", vt(args, &dir)?),
        Mode::Agent => ("agent", agent(args, &dir)?),
        Mode::Correlation => {
            let pairs = evaluation::load_score_pairs(need(&args.scores, "--scores", "correlation")?)?;
            let c = evaluation::correlations(&pairs.agent, &pairs.human)?;
            let mut r = MetricsReport::new("correlation");
            r.push("pearson_r", c.pearson)
                .push("spearman_rho", c.spearman)
                .push("kendall_tau_b", c.kendall);
            ("correlation", r)
        }
        Mode::Fidelity => {
            let f = evaluation::load_embeddings(need(&args.final_emb, "--final-emb", "fidelity")?)?;
            let raw = evaluation::load_embeddings(need(&args.raw_emb, "--raw-emb", "fidelity")?)?;
            let mut r = MetricsReport::new("fidelity");
            r.push("fidelity", opt_metric(evaluation::fidelity(&f, &raw))?);
            ("fidelity", r)
        }
    };
    print!("{}", report.to_table());
    let target = args
        .report_dir
        .clone()
        .or_else(|| dir.root.is_dir().then(|| dir.metrics()));
    if let Some(target) = target {
        if args.mode != Mode::Agent || args.reply.is_some() {
            report.write(&target, name)?;
        }
    }
    Ok(())
}

fn hd(args: &EvaluateArgs, dir: &JobDir, fraction: f64) -> Result<MetricsReport> {
    let mut r = MetricsReport::new("hd");
    let rankings = if let Some(path) = &args.dataset {
        let ds = evaluation::load_hd_dataset(path)?;
        let multi = ds.multi_annotator();
        if !multi.is_empty() {
            r.push("top5_map", Some(evaluation::top5_map(&multi, fraction)?));
        }
        ds.rankings()
    } else {
        let ann = evaluation::load_annotations(need(&args.annotations, "--annotations or --dataset", "hd")?)?;
        let track = match &args.saliency {
            Some(p) => pipeline::read_json(p)?,
            None => pipeline::load_saliency(dir)?,
        };
        evaluation::rankings_from_annotations(&track, &ann)?
    };
    if !rankings.is_empty() {
        let summary = evaluation::map_over_videos(&rankings)?;
        r.push("map", Some(summary.map));
        for (video, ap) in &summary.per_video {
            r.push(format!("ap[{video}]"), *ap);
        }
        if summary.skipped() > 0 {
            r.note(format!("{} video(s) without positives skipped", summary.skipped()));
        }
    }
    if r.metrics.is_empty() {
        bail!("dataset has no labelled or annotated videos");
    }
    Ok(r)
}

fn vt(args: &EvaluateArgs, dir: &JobDir) -> Result<MetricsReport> {
    let ann = evaluation::load_annotations(need(&args.annotations, "--annotations", "vt")?)?;
    let plan: vtrim::CompositionPlan = match &args.plan {
        Some(p) => pipeline::read_json(p)?,
        None => pipeline::load_plan(dir)?,
    };
    let (waste, highlight) = evaluation::waste_highlight_precision(&plan.ordered_clip_ids, &ann)?;
    let mut r = MetricsReport::new("vt");
    r.push("waste_ratio", Some(waste)).push("highlight_ratio", Some(highlight));
    let track = match &args.saliency {
        Some(p) => Some(pipeline::read_json(p)?),
        None => pipeline::load_saliency(dir).ok(),
    };
    if let Some(track) = track {
        let rankings = evaluation::rankings_from_annotations(&track, &ann)?;
        r.push("saliency_map", opt_metric(evaluation::map_over_videos(&rankings).map(|s| s.map))?);
    }
    Ok(r)
}

fn agent(args: &EvaluateArgs, dir: &JobDir) -> Result<MetricsReport> {
    if let Some(path) = &args.reply {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report = evaluation::parse_eval_report(&text)?;
        let mut r = MetricsReport::new("agent");
        for (c, s) in &report.criteria {
            r.push(c.label(), Some(s.score));
        }
        r.push("average", Some(report.average));
        return Ok(r);
    }
    let job = args.agent.load()?;
    let gateway = args.agent.gateway(&job)?;
    let outcome = pipeline::agent_evaluation_stage(
        dir,
        &job.config,
        &args.agent.prompts()?,
        &gateway,
        &AutoMedia::default(),
    )?;
    let mut r = MetricsReport::new("agent");
    match outcome.report {
        Some(report) => {
            for (c, s) in &report.criteria {
                r.push(c.label(), Some(s.score));
            }
            r.push("average", Some(report.average));
        }
        None => {
            r.note("evaluation reply could not be parsed; report invalid");
        }
    }
    Ok(r)
}
