use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chainprobe::config::{replay_pool, HarnessConfig};
use chainprobe::human_eval::{
    agreement_report, annotations_from_csv, prepare_session, serve, CreateSession, Instructions, PrepareOptions,
    SessionService, DEFAULT_CAP_PAIRS, DEFAULT_N_CE,
};
use chainprobe::model::{ModelRef, ProbeKind};
use chainprobe::pipeline::{regenerate_reports, Pipeline, RunConfig, RunSettings};
use chainprobe::report::MetricsReport;
use chainprobe::store::{Stage, Store};
use clap::{Args, Parser, Subcommand};

const PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "chainprobe", version, about = "Generate causal chains with LLMs and probe every link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage.
    Run(RunArgs),
    /// Copy CE pairs into the run.
    Ingest(RunArgs),
    /// One generation call per CE pair and generator.
    Generate(RunArgs),
    /// Parse raw generations into chains.
    Parse(RunArgs),
    /// Split chains into unique links.
    Decompose(RunArgs),
    /// Ask every evaluator about every link.
    Probe(RunArgs),
    /// Compute and write reports.
    Metrics(RunArgs),
    /// Run every stage against live providers, recording replies into --fixtures.
    ReplayRecord(RunArgs),
    /// Regenerate a run's reports, or compute agreement from exported judgments.
    Report(ReportArgs),
    /// Pick chain pairs for annotation and assign annotators.
    SelectHumanEval(SelectArgs),
    /// Serve the annotation HTTP API.
    ServeAnnotation(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// CE pairs, CSV or JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "store")]
    store: PathBuf,
    /// Generators, comma separated `provider:model[@tag]`.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<ModelRef>,
    /// Evaluators; defaults to the generators.
    #[arg(long, value_delimiter = ',')]
    evaluators: Vec<ModelRef>,
    /// Probe kinds; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    probes: Vec<ProbeKind>,
    /// Replay fixture file. With `replay-record` this is the output.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Provider profiles (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    max_parallel: usize,
    /// Continue past stages that left requests unanswered.
    #[arg(long)]
    allow_partial: bool,
    /// Also probe chains whose anchors were repaired.
    #[arg(long)]
    include_repaired: bool,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "store")]
    store: PathBuf,
    /// Defaults to the only run in the store.
    #[arg(long)]
    run_id: Option<String>,
    /// Drop chains without complete verdicts instead of failing.
    #[arg(long)]
    allow_partial: bool,
    /// Session request written by `select-human-eval`.
    #[arg(long, requires = "annotations")]
    session: Option<PathBuf>,
    /// Annotation CSV exported by the annotation service.
    #[arg(long, requires = "session")]
    annotations: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long, default_value = "store")]
    store: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    /// Generator label; defaults to the best one by integrity.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long, default_value_t = DEFAULT_N_CE)]
    n_ce: usize,
    /// Annotator tokens, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_annotators")]
    annotators: Vec<String>,
    /// Generate tokens `a01`, `a02`, ...
    #[arg(long, default_value_t = 10)]
    n_annotators: usize,
    #[arg(long, default_value_t = 4)]
    per_chain: usize,
    /// Chain pairs per annotator.
    #[arg(long, default_value_t = DEFAULT_CAP_PAIRS)]
    cap_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the session request; defaults to the run's reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Session storage directory.
    #[arg(long, default_value = "annotation")]
    dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Session request to create on startup.
    #[arg(long)]
    session: Option<PathBuf>,
    /// Instruction text and examples (JSON); the built-in text otherwise.
    #[arg(long)]
    instructions: Option<PathBuf>,
}

fn stages_for(command: &Command) -> Option<&'static [Stage]> {
    Some(match command {
        Command::Run(_) | Command::ReplayRecord(_) => &Stage::PIPELINE,
        Command::Ingest(_) => &[Stage::Ingest],
        Command::Generate(_) => &[Stage::Generate],
        Command::Parse(_) => &[Stage::Parse],
        Command::Decompose(_) => &[Stage::Decompose],
        Command::Probe(_) => &[Stage::Probe],
        Command::Metrics(_) => &[Stage::Metrics],
        _ => return None,
    })
}

async fn run_pipeline(args: RunArgs, stages: &[Stage], record: bool) -> Result<u8> {
    let harness = args.config.as_deref().map(HarnessConfig::load).transpose()?;
    let pool = match (&args.fixtures, &harness) {
        (Some(fixtures), Some(h)) if record => h.recording_pool(Some(args.max_parallel), fixtures)?,
        (_, None) if record => bail!("replay-record needs --config with provider profiles"),
        (None, _) if record => bail!("replay-record needs --fixtures for the output file"),
        (Some(fixtures), _) => replay_pool(fixtures, args.max_parallel)?,
        (None, Some(h)) => h.live_pool(Some(args.max_parallel))?,
        (None, None) => bail!("pass --fixtures to replay or --config to call providers"),
    };
    let evaluators = if args.evaluators.is_empty() {
        args.models.clone()
    } else {
        args.evaluators
    };
    let mut settings = RunSettings::new(args.models, evaluators);
    if !args.probes.is_empty() {
        settings.probes = args.probes.into_iter().collect();
    }
    settings.seed = args.seed;
    settings.include_repaired = args.include_repaired;
    if let Some(h) = &harness {
        settings.generation = h.generation.clone();
        settings.probe = h.probe.clone();
    }
    let config = RunConfig {
        input: args.input,
        store_root: args.store,
        settings,
        max_parallel: args.max_parallel,
        allow_partial: args.allow_partial,
        run_id: args.run_id,
    };
    let pipeline = Pipeline::new(config, Arc::new(pool))?;
    let outcome = pipeline.run_stages(stages).await?;
    println!("run {}", pipeline.run_id());
    for s in &outcome.manifest.stages {
        match &s.error {
            Some(e) => println!("  {:?}: {:?} ({e})", s.stage, s.status),
            None => println!("  {:?}: {:?}", s.stage, s.status),
        }
    }
    if outcome.manifest.stage_status(Stage::Metrics).is_some() {
        let dir = pipeline.store().run_dir(pipeline.run_id()).join("reports");
        println!("reports in {}", dir.display());
    }
    Ok(if outcome.partial { PARTIAL } else { 0 })
}

fn resolve_run(store: &Store, run_id: Option<String>) -> Result<String> {
    if let Some(id) = run_id {
        return Ok(id);
    }
    let runs = store.list_runs()?;
    match runs.as_slice() {
        [only] => Ok(only.clone()),
        [] => bail!("no runs in {}", store.root().display()),
        _ => bail!("several runs in {}; pass --run-id ({})", store.root().display(), runs.join(", ")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report(args: ReportArgs) -> Result<u8> {
    if let (Some(session), Some(annotations)) = (&args.session, &args.annotations) {
        let request: CreateSession = read_json(session)?;
        let text = std::fs::read_to_string(annotations).with_context(|| format!("reading {}", annotations.display()))?;
        let records = annotations_from_csv(&text)?;
        let report = agreement_report(&request.plan, &records)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(0);
    }
    let store = Store::open(&args.store)?;
    let run = resolve_run(&store, args.run_id)?;
    regenerate_reports(&store, &run, args.allow_partial)?;
    let summary = store.run_dir(&run).join("reports").join("summary.txt");
    print!("{}", std::fs::read_to_string(summary)?);
    Ok(0)
}

fn select(args: SelectArgs) -> Result<u8> {
    let store = Store::open(&args.store)?;
    let run = resolve_run(&store, args.run_id)?;
    let metrics = store.run_dir(&run).join("reports").join("metrics.json");
    let report: MetricsReport =
        read_json(&metrics).context("run the metrics stage before selecting a human-eval sample")?;
    let annotators = if args.annotators.is_empty() {
        (1..=args.n_annotators).map(|i| format!("a{i:02}")).collect()
    } else {
        args.annotators
    };
    let options = PrepareOptions {
        generator: args.generator,
        n_ce: args.n_ce,
        annotators,
        per_chain: args.per_chain,
        cap_pairs: args.cap_pairs,
        seed: args.seed,
    };
    let prepared = prepare_session(&store, &run, &report, &options)?;
    let out = match args.out {
        Some(p) => p,
        None => store.reports_dir(&run)?.join("human_eval_session.json"),
    };
    std::fs::write(&out, serde_json::to_string_pretty(&prepared.request)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} chain pairs from {} for {} annotators ({} judgments) written to {}",
        prepared.request.samples.len(),
        prepared.generator.label(),
        prepared.request.plan.annotators.len(),
        prepared.request.plan.expected_judgments().len(),
        out.display()
    );
    if let Some(found) = prepared.shortfall {
        eprintln!("only {found} of {} requested CE pairs were eligible", args.n_ce);
        return Ok(PARTIAL);
    }
    Ok(0)
}

async fn serve_annotation(args: ServeArgs) -> Result<u8> {
    let instructions = match &args.instructions {
        Some(p) => Instructions::load(p)?,
        None => Instructions::builtin(),
    };
    let service = SessionService::open(&args.dir, instructions)?;
    if let Some(path) = &args.session {
        let id = service.create_session(read_json(path)?)?;
        println!("session {id}");
    }
    serve(Arc::new(service), SocketAddr::new(args.host, args.port)).await?;
    Ok(0)
}

async fn dispatch(cli: Cli) -> Result<u8> {
    let stages = stages_for(&cli.command);
    match cli.command {
        Command::ReplayRecord(args) => run_pipeline(args, stages.expect("pipeline command"), true).await,
        Command::Run(args)
        | Command::Ingest(args)
        | Command::Generate(args)
        | Command::Parse(args)
        | Command::Decompose(args)
        | Command::Probe(args)
        | Command::Metrics(args) => run_pipeline(args, stages.expect("pipeline command"), false).await,
        Command::Report(args) => report(args),
        Command::SelectHumanEval(args) => select(args),
        Command::ServeAnnotation(args) => serve_annotation(args).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()).await {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
