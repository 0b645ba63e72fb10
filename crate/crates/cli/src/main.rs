//! `vtrim` command-line tool.

mod eval;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use vtrim::media::AutoMedia;
use vtrim::pipeline::{self, BackendChoice, JobDir, JobFile};
use vtrim::prompt::PromptSet;

#[derive(Parser, Debug)]
#[command(name = "vtrim", version, about = "Trim raw footage into a short story-driven cut")]
struct Cli {
    /// Log filter, e.g. `info` or `vtrim=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment sources into clips, extract keyframes and estimate cost.
    Ingest(JobArgs),
    /// Describe every clip with the captioning agent.
    Structure(AgentArgs),
    /// Apply the dynamic filter and compute saliency.
    Filter(JobArgs),
    /// Compose the storyline plan from the filtered clips.
    Compose(ComposeArgs),
    /// Render the final cut and manifest from the plan.
    Render(JobArgs),
    /// Run every stage end to end.
    Trim(ComposeArgs),
    /// Compute evaluation metrics.
    Evaluate(eval::EvaluateArgs),
    /// Re-record the bundled demo fixtures with the scripted agent.
    Fixtures(FixturesArgs),
}

#[derive(Args, Debug, Clone)]
pub struct JobArgs {
    /// Job file (TOML). Later stages fall back to `<out>/job.json`.
    #[arg(long)]
    job: Option<PathBuf>,
    /// Job output directory.
    #[arg(long, default_value = "vtrim-job")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Live,
    Mock,
    Replay,
}

#[derive(Args, Debug, Clone)]
pub struct AgentArgs {
    #[command(flatten)]
    job: JobArgs,
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendKind,
    /// Recorded responses for the mock and replay backends.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Response cache shared across runs.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory of prompt files overriding the built-in templates.
    #[arg(long)]
    prompt_dir: Option<PathBuf>,
    /// Maximum concurrent agent calls.
    #[arg(long)]
    in_flight: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ComposeArgs {
    #[command(flatten)]
    agent: AgentArgs,
    #[arg(long)]
    group_size: Option<usize>,
    /// Target length of the final cut in seconds.
    #[arg(long)]
    target_duration: Option<f64>,
}

#[derive(Args, Debug)]
struct FixturesArgs {
    /// Fixture directory to (re)write.
    #[arg(long)]
    out: PathBuf,
    /// Where the recording run keeps its job artifacts (a temp dir by default).
    #[arg(long)]
    work: Option<PathBuf>,
}

const JOB_SNAPSHOT: &str = "job.json";

fn read_job_toml(path: &Path) -> Result<JobFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing job file {}", path.display()))
}

impl JobArgs {
    fn dir(&self) -> JobDir {
        JobDir::new(&self.out)
    }

    /// The job file: `--job` if given, else the snapshot in the job directory.
    fn load(&self, fixtures: Option<&Path>) -> Result<JobFile> {
        if let Some(path) = &self.job {
            return read_job_toml(path);
        }
        let snapshot = self.out.join(JOB_SNAPSHOT);
        if snapshot.exists() {
            return Ok(pipeline::read_json(&snapshot)?);
        }
        if let Some(path) = fixtures.map(|f| f.join("job.toml")).filter(|p| p.exists()) {
            return read_job_toml(&path);
        }
        bail!(
            "no job file: pass --job or run `ingest` into {} first",
            self.out.display()
        )
    }
}

impl AgentArgs {
    fn load(&self) -> Result<JobFile> {
        let mut job = self.job.load(self.fixtures.as_deref())?;
        if let Some(n) = self.in_flight {
            job.config.gateway.in_flight = n;
        }
        Ok(job)
    }

    fn prompts(&self) -> Result<PromptSet> {
        Ok(PromptSet::load(self.prompt_dir.as_deref())?)
    }

    fn gateway(&self, job: &JobFile) -> Result<vtrim::gateway::Gateway> {
        let choice = match (self.backend, &self.fixtures) {
            (BackendKind::Live, _) => BackendChoice::Live,
            (BackendKind::Mock, Some(f)) => BackendChoice::Mock { fixtures: f.clone() },
            (BackendKind::Replay, Some(f)) => BackendChoice::Replay { fixtures: f.clone() },
            (_, None) => bail!("--backend mock and replay need --fixtures"),
        };
        Ok(pipeline::build_gateway(
            &choice,
            &job.config.gateway,
            self.cache_dir.as_deref(),
        )?)
    }
}

impl ComposeArgs {
    fn load(&self) -> Result<JobFile> {
        let mut job = self.agent.load()?;
        if let Some(n) = self.group_size {
            job.config.composition.group_size = n;
        }
        if let Some(t) = self.target_duration {
            job.config.composition.target_duration = t;
        }
        job.config.validate()?;
        Ok(job)
    }
}

fn save_snapshot(dir: &JobDir, job: &JobFile) -> Result<()> {
    pipeline::write_json(&dir.root.join(JOB_SNAPSHOT), job)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let media = AutoMedia::default();
    match cli.command {
        Command::Ingest(args) => {
            let job = args.load(None)?;
            let dir = args.dir();
            let (record, cost) = pipeline::ingest_stage(&job, &dir, &media)?;
            save_snapshot(&dir, &job)?;
            println!(
                "{} clips, {} keyframes, {} excluded; estimated {} input / {} output tokens, ${:.2}",
                record.clips.len(),
                cost.keyframes,
                record.excluded.len(),
                cost.input_image_tokens + cost.input_text_tokens,
                cost.output_text_tokens,
                cost.usd
            );
        }
        Command::Structure(args) => {
            let job = args.load()?;
            let gateway = args.gateway(&job)?;
            let descs = pipeline::structure_stage(&args.job.dir(), &job.config, &args.prompts()?, &gateway)?;
            println!("{} clips described", descs.len());
        }
        Command::Filter(args) => {
            let records = pipeline::filter_stage(&args.dir())?;
            let kept = records.iter().filter(|r| !r.verdict.filter_flag).count();
            println!("{kept} of {} clips kept", records.len());
        }
        Command::Compose(args) => {
            let job = args.load()?;
            let gateway = args.agent.gateway(&job)?;
            let dir = args.agent.job.dir();
            let plan = pipeline::compose_stage(&dir, &job.config, &args.agent.prompts()?, &gateway)?;
            save_snapshot(&dir, &job)?;
            println!("plan of {} clips written to {}", plan.ordered_clip_ids.len(), dir.plan().display());
        }
        Command::Render(args) => {
            let manifest = pipeline::render_stage(&args.dir(), &media)?;
            println!(
                "{} segments, {:.1}s, manifest at {}",
                manifest.segments.len(),
                manifest.rendered_duration,
                args.dir().manifest().display()
            );
        }
        Command::Trim(args) => {
            let job = args.load()?;
            let gateway = args.agent.gateway(&job)?;
            let dir = args.agent.job.dir();
            std::fs::create_dir_all(&dir.root)
                .with_context(|| format!("creating {}", dir.root.display()))?;
            save_snapshot(&dir, &job)?;
            let manifest = pipeline::trim(&job, &dir, &args.agent.prompts()?, &gateway, &media, &media)?;
            let plan = pipeline::load_plan(&dir)?;
            println!(
                "final cut: {} clips in {} segments, {:.1}s; artifacts in {}",
                plan.ordered_clip_ids.len(),
                manifest.segments.len(),
                manifest.rendered_duration,
                dir.root.display()
            );
        }
        Command::Evaluate(args) => eval::run(&args)?,
        Command::Fixtures(args) => {
            let tmp = tempfile::tempdir()?;
            let work = args.work.clone().unwrap_or_else(|| tmp.path().to_path_buf());
            std::fs::create_dir_all(&args.out)?;
            let eval = vtrim::demo::record_fixtures(&args.out, &work)?;
            let job = vtrim::demo::job();
            std::fs::write(
                args.out.join("job.toml"),
                toml::to_string_pretty(&job).context("serialising demo job")?,
            )?;
            let entries = std::fs::read_dir(&args.out)?.count() - 1;
            println!(
                "recorded {entries} exchanges into {} (evaluation average {:?})",
                args.out.display(),
                eval.report.map(|r| r.average)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match &cli.log {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
