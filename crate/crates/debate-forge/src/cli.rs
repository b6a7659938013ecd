//! Command-line surface: personas | plan | write | run | eval | report.
//!
//! Settings resolve in precedence order: built-in defaults, then a TOML
//! config file, then `DEBATE_FORGE_*` environment variables, then flags.
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use debate_forge::backend::{
    Backend, CachePolicy, CachedBackend, OpenAiBackend, OpenAiConfig, ScriptedBackend,
    API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL,
};
use debate_forge::context::EvalContext;
use debate_forge::debate::{run_planner_critic_debate, synthesize_plan, DebateConfig};
use debate_forge::persona::{create_persona_pool, select_team, PersonaConfig};
use debate_forge::pipelines::{run_experiment, RunConfig};
use debate_forge::prompts::PromptSet;
use debate_forge::store::{aggregate_report, compute_run_metrics, load_topics, RunStore};
use debate_forge::types::{Method, Proposition, TurnRole};
use debate_forge::{debate, pipelines};

const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-small";

#[derive(Parser)]
#[command(
    name = "debate-forge",
    version,
    about = "Persona-driven multi-agent debate pipeline for counterargumentative essays"
)]
struct Cli {
    /// TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// "live" or "scripted:<fixture-dir>".
    #[arg(long, global = true)]
    backend: Option<String>,
    /// OpenAI-compatible base URL (env DEBATE_FORGE_BASE_URL).
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Chat model id.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Embedding model id.
    #[arg(long, global = true)]
    embedding_model: Option<String>,
    /// Sampling temperature for generation calls.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Main-team size N.
    #[arg(long, global = true)]
    team_size: Option<u32>,
    /// Maximum debate rounds.
    #[arg(long, global = true)]
    round_cap: Option<u32>,
    /// Samples per topic M.
    #[arg(long, global = true)]
    samples: Option<u32>,
    /// Directory overriding the whole prompt template set.
    #[arg(long, global = true)]
    prompt_dir: Option<PathBuf>,
    /// off | on | replay.
    #[arg(long, global = true)]
    cache_mode: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Concurrent samples / in-flight requests.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create the persona pool and select the debate team for one topic.
    Personas {
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        topic_file: Option<PathBuf>,
        /// Line index into the topic file.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run debate-driven planning for one topic, emitting transcript and plan.
    Plan {
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        topic_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// persona_debate or agent_debate.
        #[arg(long, default_value = "persona_debate")]
        method: String,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        transcript_out: Option<PathBuf>,
    },
    /// Write the essay for an existing plan file.
    Write {
        #[arg(long)]
        plan_file: PathBuf,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        topic_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Generate M samples per topic with the chosen method.
    Run {
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// Evaluate one run, writing metrics.json and report.csv.
    Eval { run_id: String },
    /// Compare runs in a Rel/Qual/S-BLEU/S-Emb/Pers table.
    Report {
        run_ids: Vec<String>,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    base_url: Option<String>,
    model_id: Option<String>,
    embedding_model_id: Option<String>,
    temperature: Option<f64>,
    eval_temperature: Option<f64>,
    team_size: Option<u32>,
    round_cap: Option<u32>,
    samples: Option<u32>,
    prompt_dir: Option<String>,
    cache_mode: Option<String>,
    cache_dir: Option<String>,
    concurrency: Option<usize>,
    runs_dir: Option<String>,
    pool_min: Option<usize>,
    pool_max: Option<usize>,
    judge_scale_min: Option<f64>,
    judge_scale_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum BackendSpec {
    Live,
    Scripted(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CacheMode {
    Off,
    On,
    Replay,
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(CacheMode::Off),
            "on" => Ok(CacheMode::On),
            "replay" => Ok(CacheMode::Replay),
            other => Err(format!("unknown cache mode '{other}' (expected off, on or replay)")),
        }
    }
}

struct Settings {
    backend: BackendSpec,
    base_url: String,
    model_id: String,
    embedding_model_id: String,
    temperature: f64,
    eval_temperature: f64,
    team_size: u32,
    round_cap: u32,
    samples: u32,
    prompt_dir: Option<PathBuf>,
    cache_mode: CacheMode,
    cache_dir: PathBuf,
    concurrency: usize,
    runs_dir: PathBuf,
    pool_min: usize,
    pool_max: usize,
    judge_scale: (f64, f64),
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let path = match path {
        Some(path) => path.to_path_buf(),
        None => {
            let default = PathBuf::from("debate-forge.toml");
            if !default.exists() {
                return Ok(FileConfig::default());
            }
            default
        }
    };
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&raw)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn resolve_settings(cli: &Cli) -> CliResult<Settings> {
    let file = load_file_config(cli.config.as_deref())?;

    let backend_raw = cli
        .backend
        .clone()
        .or(file.backend)
        .unwrap_or_else(|| "live".to_string());
    let backend = if backend_raw == "live" {
        BackendSpec::Live
    } else if let Some(dir) = backend_raw.strip_prefix("scripted:") {
        BackendSpec::Scripted(PathBuf::from(dir))
    } else {
        return Err(CliError::usage(format!(
            "unknown backend '{backend_raw}' (expected live or scripted:<dir>)"
        )));
    };

    let base_url = cli
        .base_url
        .clone()
        .or_else(|| std::env::var(BASE_URL_ENV).ok())
        .or(file.base_url)
        .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());

    let cache_mode = match cli.cache_mode.clone().or(file.cache_mode) {
        Some(raw) => CacheMode::from_str(&raw).map_err(CliError::usage)?,
        None => CacheMode::On,
    };

    Ok(Settings {
        backend,
        base_url,
        model_id: cli.model.clone().or(file.model_id).unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        embedding_model_id: cli
            .embedding_model
            .clone()
            .or(file.embedding_model_id)
            .unwrap_or_else(|| DEFAULT_EMBEDDING_MODEL.to_string()),
        temperature: cli.temperature.or(file.temperature).unwrap_or(1.0),
        eval_temperature: file.eval_temperature.unwrap_or(0.0),
        team_size: cli.team_size.or(file.team_size).unwrap_or(3),
        round_cap: cli.round_cap.or(file.round_cap).unwrap_or(6),
        samples: cli.samples.or(file.samples).unwrap_or(7),
        prompt_dir: cli.prompt_dir.clone().or(file.prompt_dir.map(PathBuf::from)),
        cache_mode,
        cache_dir: cli
            .cache_dir
            .clone()
            .or(file.cache_dir.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache")),
        concurrency: cli.concurrency.or(file.concurrency).unwrap_or(4).max(1),
        runs_dir: cli
            .runs_dir
            .clone()
            .or(file.runs_dir.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs")),
        pool_min: file.pool_min.unwrap_or(5),
        pool_max: file.pool_max.unwrap_or(10),
        judge_scale: (file.judge_scale_min.unwrap_or(1.0), file.judge_scale_max.unwrap_or(5.0)),
    })
}

fn load_prompts(settings: &Settings) -> CliResult<PromptSet> {
    match &settings.prompt_dir {
        Some(dir) => PromptSet::from_dir(dir)
            .map_err(|e| CliError::usage(format!("prompt dir: {e}"))),
        None => Ok(PromptSet::builtin()),
    }
}

fn build_backend(settings: &Settings) -> CliResult<Arc<dyn Backend>> {
    let inner: Arc<dyn Backend> = match &settings.backend {
        BackendSpec::Scripted(dir) => Arc::new(
            ScriptedBackend::from_dir(dir)
                .map_err(|e| CliError::usage(format!("scripted backend: {e}")))?,
        ),
        BackendSpec::Live => {
            let api_key = std::env::var(API_KEY_ENV).map_err(|_| {
                CliError::usage(format!("live backend needs {API_KEY_ENV} to be set"))
            })?;
            let mut config = OpenAiConfig::new(settings.base_url.clone(), api_key);
            config.max_in_flight = settings.concurrency;
            Arc::new(
                OpenAiBackend::new(config)
                    .map_err(|e| CliError::usage(format!("live backend: {e}")))?,
            )
        }
    };

    Ok(match settings.cache_mode {
        CacheMode::Off => inner,
        CacheMode::On => Arc::new(CachedBackend::new(
            inner,
            settings.cache_dir.clone(),
            CachePolicy::embeddings_only(),
        )),
        CacheMode::Replay => Arc::new(CachedBackend::new(
            inner,
            settings.cache_dir.clone(),
            CachePolicy::replay(),
        )),
    })
}

fn run_config(settings: &Settings, method: Method) -> RunConfig {
    let mut config = RunConfig::new(method, settings.model_id.clone());
    config.samples_per_topic = settings.samples;
    config.temperature = settings.temperature;
    config.debate = DebateConfig {
        team_size: settings.team_size,
        round_cap: settings.round_cap,
        ..DebateConfig::default()
    };
    config.persona = PersonaConfig {
        pool_min: settings.pool_min,
        pool_max: settings.pool_max,
        ..PersonaConfig::default()
    };
    config
}

fn resolve_topic(
    topic: Option<&str>,
    topic_file: Option<&Path>,
    index: usize,
) -> CliResult<Proposition> {
    match (topic, topic_file) {
        (Some(text), _) => Ok(Proposition::new("t000", text)),
        (None, Some(path)) => {
            let topics = load_topics(path)?;
            topics.get(index).cloned().ok_or_else(|| {
                CliError::usage(format!(
                    "topic index {index} out of range, file has {} topics",
                    topics.len()
                ))
            })
        }
        (None, None) => Err(CliError::usage("pass --topic <text> or --topic-file <path>")),
    }
}

fn parse_method(raw: &str) -> CliResult<Method> {
    Method::from_str(raw).map_err(CliError::usage)
}

fn cmd_personas(settings: &Settings, proposition: &Proposition) -> CliResult<()> {
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let config = run_config(settings, Method::PersonaDebate);
    let ctx = config.context(backend.as_ref(), &prompts);

    let pool = create_persona_pool(proposition, &config.persona, &ctx)
        .map_err(|e| CliError::Runtime(format!("persona_pool: {e}")))?;
    let team = select_team(
        &pool,
        proposition,
        settings.team_size as usize,
        &config.persona,
        &ctx,
    )
    .map_err(|e| CliError::Runtime(format!("team_selection: {e}")))?;

    println!("Persona pool for {}: {}", proposition.id, proposition.statement);
    for persona in &pool.personas {
        println!("  [{}] {}: {}", persona.agent_id, persona.description, persona.claim);
    }
    println!("Selected team:");
    for member in &team.members {
        println!("  [{}] {}: {}", member.agent_id, member.description, member.claim);
        if let Some(reason) = &member.selection_reason {
            println!("      reason: {reason}");
        }
    }
    Ok(())
}

fn cmd_plan(
    settings: &Settings,
    proposition: &Proposition,
    method: Method,
    plan_out: Option<&Path>,
    transcript_out: Option<&Path>,
) -> CliResult<()> {
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let config = run_config(settings, method);
    let ctx = config.context(backend.as_ref(), &prompts);

    let transcript = match method {
        Method::PersonaDebate => {
            let pool = create_persona_pool(proposition, &config.persona, &ctx)
                .map_err(|e| CliError::Runtime(format!("persona_pool: {e}")))?;
            let team = select_team(
                &pool,
                proposition,
                settings.team_size as usize,
                &config.persona,
                &ctx,
            )
            .map_err(|e| CliError::Runtime(format!("team_selection: {e}")))?;
            debate::run_debate(proposition, &team, &config.debate, &ctx)
                .map_err(|e| CliError::Runtime(format!("debate: {e}")))?
        }
        Method::AgentDebate => run_planner_critic_debate(proposition, &config.debate, &ctx)
            .map_err(|e| CliError::Runtime(format!("debate: {e}")))?,
        other => {
            return Err(CliError::usage(format!(
                "plan supports persona_debate or agent_debate, not {other}"
            )))
        }
    };
    let plan = synthesize_plan(proposition, &transcript, &config.debate, &ctx)
        .map_err(|e| CliError::Runtime(format!("plan_synthesis: {e}")))?;

    println!("Debate transcript ({} turns, {:?}):", transcript.turns.len(), transcript.terminated_by);
    for turn in &transcript.turns {
        if turn.role == TurnRole::Moderator {
            continue;
        }
        println!("[round {}] {}: {}", turn.round, turn.speaker_id, turn.content);
    }
    let rendered = debate::render_plan(&plan);
    println!("\nArgument plan:\n{rendered}");

    if let Some(path) = plan_out {
        std::fs::write(path, format!("{rendered}\n"))?;
    }
    if let Some(path) = transcript_out {
        let mut body = String::new();
        for turn in &transcript.turns {
            body.push_str(&serde_json::to_string(turn)?);
            body.push('\n');
        }
        std::fs::write(path, body)?;
    }
    Ok(())
}

fn cmd_write(settings: &Settings, proposition: &Proposition, plan_file: &Path) -> CliResult<()> {
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let config = run_config(settings, Method::LlmPlan);
    let ctx = config.context(backend.as_ref(), &prompts);

    let plan_text = std::fs::read_to_string(plan_file)?;
    let plan = debate::parse_plan(&plan_text);
    if plan.main_points.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no numbered main points",
            plan_file.display()
        )));
    }

    let essay = pipelines::write_argument(proposition, &plan, &ctx)
        .map_err(|e| CliError::Runtime(format!("argument_writing: {e}")))?;
    println!("{essay}");
    Ok(())
}

fn cmd_run(settings: &Settings, topics_path: &Path, method: Method) -> CliResult<()> {
    let topics = load_topics(topics_path)?;
    if topics.is_empty() {
        return Err(CliError::usage(format!(
            "{} contains no topics",
            topics_path.display()
        )));
    }
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let config = run_config(settings, method);
    let ctx = config.context(backend.as_ref(), &prompts);
    let store = RunStore::new(&settings.runs_dir);

    let run_id = run_experiment(&topics, &config, &ctx, &store, settings.concurrency)?;
    let manifest = store.load_manifest(&run_id)?;
    let ok = manifest
        .entries
        .iter()
        .filter(|e| e.status == debate_forge::store::EntryStatus::Ok)
        .count();
    eprintln!(
        "run {run_id}: {ok}/{} samples ok under {}",
        manifest.entries.len(),
        store.run_dir(&run_id).display()
    );
    println!("{run_id}");
    Ok(())
}

fn cmd_eval(settings: &Settings, run_id: &str) -> CliResult<()> {
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let store = RunStore::new(&settings.runs_dir);
    let mut ctx = EvalContext::new(
        backend.as_ref(),
        &prompts,
        settings.model_id.clone(),
        settings.embedding_model_id.clone(),
    );
    ctx.temperature = settings.eval_temperature;
    ctx.judge_scale = settings.judge_scale;

    let metrics = compute_run_metrics(&store, run_id, &ctx)?;
    store.write_metrics(run_id, &metrics)?;

    for topic in &metrics.topics {
        for warning in &topic.warnings {
            eprintln!("warning: {}: {warning}", topic.proposition_id);
        }
    }
    let table = debate_forge::store::ComparisonTable { rows: vec![metrics.aggregate.clone()] };
    println!("{}", table.render_text());
    eprintln!(
        "metrics written to {}",
        store.run_dir(run_id).join("metrics.json").display()
    );
    Ok(())
}

fn cmd_report(settings: &Settings, run_ids: &[String], csv: Option<&Path>) -> CliResult<()> {
    if run_ids.is_empty() {
        return Err(CliError::usage("pass at least one run id"));
    }
    let prompts = load_prompts(settings)?;
    let backend = build_backend(settings)?;
    let store = RunStore::new(&settings.runs_dir);
    let mut ctx = EvalContext::new(
        backend.as_ref(),
        &prompts,
        settings.model_id.clone(),
        settings.embedding_model_id.clone(),
    );
    ctx.temperature = settings.eval_temperature;
    ctx.judge_scale = settings.judge_scale;

    let table = aggregate_report(&store, run_ids, &ctx)?;
    println!("{}", table.render_text());
    if let Some(path) = csv {
        std::fs::write(path, table.render_csv())?;
        eprintln!("csv written to {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli, settings: &Settings) -> CliResult<()> {
    match &cli.command {
        Command::Personas { topic, topic_file, index } => {
            let proposition = resolve_topic(topic.as_deref(), topic_file.as_deref(), *index)?;
            cmd_personas(settings, &proposition)
        }
        Command::Plan { topic, topic_file, index, method, plan_out, transcript_out } => {
            let proposition = resolve_topic(topic.as_deref(), topic_file.as_deref(), *index)?;
            let method = parse_method(method)?;
            cmd_plan(
                settings,
                &proposition,
                method,
                plan_out.as_deref(),
                transcript_out.as_deref(),
            )
        }
        Command::Write { plan_file, topic, topic_file, index } => {
            let proposition = resolve_topic(topic.as_deref(), topic_file.as_deref(), *index)?;
            cmd_write(settings, &proposition, plan_file)
        }
        Command::Run { topics, method } => {
            let method = parse_method(method)?;
            cmd_run(settings, topics, method)
        }
        Command::Eval { run_id } => cmd_eval(settings, run_id),
        Command::Report { run_ids, csv } => cmd_report(settings, run_ids, csv.as_deref()),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let settings = match resolve_settings(&cli) {
        Ok(settings) => settings,
        Err(CliError::Usage(message)) | Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
