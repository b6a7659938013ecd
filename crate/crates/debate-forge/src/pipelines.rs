//! End-to-end generation pipelines.
//!
//! `persona_debate` is the full pipeline (persona pool, team selection,
//! critic-checked debate, plan synthesis, essay writing). Three baselines
//! share its stages: `llm_e2e` writes directly, `llm_plan` plans then
//! writes, and `agent_debate` runs the persona-free planner/critic debate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, Message};
use crate::context::GenerationContext;
use crate::debate::{
    self, generate_plan_direct, run_debate, run_planner_critic_debate, synthesize_plan,
    DebateConfig,
};
use crate::persona::{create_persona_pool, select_team, PersonaConfig};
use crate::prompts::{names, PromptSet};
use crate::store::{EntryStatus, ManifestEntry, RunStore, StoreError};
use crate::types::{now_utc, ArgumentPlan, GenerationRecord, Method, Proposition};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("method mismatch: config says {expected}, pipeline is {actual}")]
    MethodMismatch { expected: Method, actual: Method },
    #[error("empty completion after retry")]
    EmptyCompletion,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("no topics to run")]
    NoTopics,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

fn stage<E>(name: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |source| PipelineError::Stage { stage: name, source: Box::new(source) }
}

/// Settings for one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub samples_per_topic: u32,
    pub model_id: String,
    pub temperature: f64,
    pub debate: DebateConfig,
    pub persona: PersonaConfig,
}

impl RunConfig {
    pub fn new(method: Method, model_id: impl Into<String>) -> Self {
        Self {
            method,
            samples_per_topic: 7,
            model_id: model_id.into(),
            temperature: 1.0,
            debate: DebateConfig::default(),
            persona: PersonaConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.samples_per_topic < 1 {
            return Err(PipelineError::InvalidConfig("samples_per_topic must be >= 1".into()));
        }
        Ok(())
    }

    pub fn context<'a>(
        &self,
        backend: &'a dyn Backend,
        prompts: &'a PromptSet,
    ) -> GenerationContext<'a> {
        GenerationContext::new(backend, prompts, self.model_id.clone())
            .with_temperature(self.temperature)
    }
}

fn chat_nonempty(
    ctx: &GenerationContext,
    messages: Vec<Message>,
) -> Result<String, PipelineError> {
    let first = ctx.chat(messages.clone())?;
    if !first.trim().is_empty() {
        return Ok(first);
    }
    log::warn!("empty completion, retrying once");
    let retry = ctx.chat(messages)?;
    if retry.trim().is_empty() {
        return Err(PipelineError::EmptyCompletion);
    }
    Ok(retry)
}

/// Transforms a plan into the final essay with the surface-writing prompt.
pub fn write_argument(
    proposition: &Proposition,
    plan: &ArgumentPlan,
    ctx: &GenerationContext,
) -> Result<String, PipelineError> {
    let violations = plan.validate();
    if !violations.is_empty() {
        return Err(PipelineError::InvalidPlan(violations.join("; ")));
    }

    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        names::ESSAY_FROM_PLAN,
        &[
            ("{proposition}", proposition.statement.as_str()),
            ("{plan}", debate::render_plan(plan).as_str()),
        ],
    );
    chat_nonempty(ctx, vec![Message::system(system), Message::user(user)])
}

/// The full pipeline: personas, team, debate, plan, essay.
pub fn run_persona_debate(
    proposition: &Proposition,
    config: &RunConfig,
    ctx: &GenerationContext,
    sample_index: u32,
) -> Result<GenerationRecord, PipelineError> {
    if config.method != Method::PersonaDebate {
        return Err(PipelineError::MethodMismatch {
            expected: config.method,
            actual: Method::PersonaDebate,
        });
    }
    config.debate.validate_for_team().map_err(stage("debate"))?;

    let pool =
        create_persona_pool(proposition, &config.persona, ctx).map_err(stage("persona_pool"))?;
    let team = select_team(
        &pool,
        proposition,
        config.debate.team_size as usize,
        &config.persona,
        ctx,
    )
    .map_err(stage("team_selection"))?;
    let transcript =
        run_debate(proposition, &team, &config.debate, ctx).map_err(stage("debate"))?;
    let plan = synthesize_plan(proposition, &transcript, &config.debate, ctx)
        .map_err(stage("plan_synthesis"))?;
    let essay = write_argument(proposition, &plan, ctx).map_err(stage("argument_writing"))?;

    Ok(GenerationRecord {
        proposition_id: proposition.id.clone(),
        method: Method::PersonaDebate,
        sample_index,
        essay,
        plan: Some(plan),
        transcript: Some(transcript),
        team: Some(team),
        model_id: ctx.model_id.clone(),
        created_at: now_utc(),
    })
}

/// Direct end-to-end baseline: one call, no plan.
pub fn run_llm_e2e(
    proposition: &Proposition,
    config: &RunConfig,
    ctx: &GenerationContext,
    sample_index: u32,
) -> Result<GenerationRecord, PipelineError> {
    if config.method != Method::LlmE2e {
        return Err(PipelineError::MethodMismatch {
            expected: config.method,
            actual: Method::LlmE2e,
        });
    }

    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        names::ESSAY_DIRECT,
        &[("{proposition}", proposition.statement.as_str())],
    );
    let essay = chat_nonempty(ctx, vec![Message::system(system), Message::user(user)])
        .map_err(stage("argument_writing"))?;

    Ok(GenerationRecord {
        proposition_id: proposition.id.clone(),
        method: Method::LlmE2e,
        sample_index,
        essay,
        plan: None,
        transcript: None,
        team: None,
        model_id: ctx.model_id.clone(),
        created_at: now_utc(),
    })
}

/// Plan-then-write baseline: one planning call, one writing call.
pub fn run_llm_plan(
    proposition: &Proposition,
    config: &RunConfig,
    ctx: &GenerationContext,
    sample_index: u32,
) -> Result<GenerationRecord, PipelineError> {
    if config.method != Method::LlmPlan {
        return Err(PipelineError::MethodMismatch {
            expected: config.method,
            actual: Method::LlmPlan,
        });
    }

    let plan = generate_plan_direct(proposition, &config.debate, ctx)
        .map_err(stage("plan_generation"))?;
    let essay = write_argument(proposition, &plan, ctx).map_err(stage("argument_writing"))?;

    Ok(GenerationRecord {
        proposition_id: proposition.id.clone(),
        method: Method::LlmPlan,
        sample_index,
        essay,
        plan: Some(plan),
        transcript: None,
        team: None,
        model_id: ctx.model_id.clone(),
        created_at: now_utc(),
    })
}

/// Persona-free planner/critic debate baseline.
pub fn run_agent_debate(
    proposition: &Proposition,
    config: &RunConfig,
    ctx: &GenerationContext,
    sample_index: u32,
) -> Result<GenerationRecord, PipelineError> {
    if config.method != Method::AgentDebate {
        return Err(PipelineError::MethodMismatch {
            expected: config.method,
            actual: Method::AgentDebate,
        });
    }

    let transcript = run_planner_critic_debate(proposition, &config.debate, ctx)
        .map_err(stage("debate"))?;
    let plan = synthesize_plan(proposition, &transcript, &config.debate, ctx)
        .map_err(stage("plan_synthesis"))?;
    let essay = write_argument(proposition, &plan, ctx).map_err(stage("argument_writing"))?;

    Ok(GenerationRecord {
        proposition_id: proposition.id.clone(),
        method: Method::AgentDebate,
        sample_index,
        essay,
        plan: Some(plan),
        transcript: Some(transcript),
        team: None,
        model_id: ctx.model_id.clone(),
        created_at: now_utc(),
    })
}

/// Runs the pipeline selected by `config.method`.
pub fn generate(
    proposition: &Proposition,
    config: &RunConfig,
    ctx: &GenerationContext,
    sample_index: u32,
) -> Result<GenerationRecord, PipelineError> {
    match config.method {
        Method::PersonaDebate => run_persona_debate(proposition, config, ctx, sample_index),
        Method::LlmE2e => run_llm_e2e(proposition, config, ctx, sample_index),
        Method::LlmPlan => run_llm_plan(proposition, config, ctx, sample_index),
        Method::AgentDebate => run_agent_debate(proposition, config, ctx, sample_index),
    }
}

/// Generates M samples per topic, persisting every record and a manifest
/// entry per sample. Individual sample failures are recorded without
/// aborting the run; records land in (topic, sample) order so scripted
/// runs are byte-reproducible.
pub fn run_experiment(
    topics: &[Proposition],
    config: &RunConfig,
    ctx: &GenerationContext,
    store: &RunStore,
    concurrency: usize,
) -> Result<String, PipelineError> {
    if topics.is_empty() {
        return Err(PipelineError::NoTopics);
    }
    config.validate()?;

    let run = store.create_run(config, ctx.prompts.digests())?;
    run.persist_topics(topics)?;
    let samples = config.samples_per_topic;
    let tasks: Vec<(usize, u32)> = (0..topics.len())
        .flat_map(|t| (0..samples).map(move |s| (t, s)))
        .collect();

    let results: Mutex<Vec<Option<Result<GenerationRecord, String>>>> =
        Mutex::new(vec![None; tasks.len()]);
    let next_task = AtomicUsize::new(0);
    let workers = concurrency.clamp(1, tasks.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next_task.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let (topic_index, sample_index) = tasks[index];
                let outcome = generate(&topics[topic_index], config, ctx, sample_index)
                    .map_err(|e| e.to_string());
                results.lock().unwrap()[index] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().unwrap();
    for (index, outcome) in results.into_iter().enumerate() {
        let (topic_index, sample_index) = tasks[index];
        let proposition_id = topics[topic_index].id.clone();
        match outcome.expect("every task ran") {
            Ok(record) => {
                run.persist_record(&record)?;
                if let Some(transcript) = &record.transcript {
                    run.persist_transcript(&proposition_id, sample_index, transcript)?;
                }
                run.push_entry(ManifestEntry {
                    proposition_id,
                    sample_index,
                    status: EntryStatus::Ok,
                    error: None,
                })?;
            }
            Err(message) => {
                log::warn!("sample {proposition_id}/{sample_index} failed: {message}");
                run.push_entry(ManifestEntry {
                    proposition_id,
                    sample_index,
                    status: EntryStatus::Failed,
                    error: Some(message),
                })?;
            }
        }
    }

    Ok(run.run_id().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{RecordingBackend, ScriptedBackend};
    use crate::types::{validate_record, PlanPoint, Termination};

    fn proposition() -> Proposition {
        Proposition::new("t000", "We should make all museums free of charge")
    }

    fn pool_response() -> String {
        (0..6)
            .map(|i| {
                serde_json::json!({
                    "agent_id": i,
                    "description": format!("Persona {i}"),
                    "claim": format!("Claim {i}."),
                })
                .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn selection_response() -> String {
        [0, 2, 5]
            .iter()
            .map(|i| {
                serde_json::json!({
                    "agent_id": i,
                    "description": format!("Persona {i}"),
                    "claim": format!("Claim {i}."),
                    "reason": "complementary angle",
                })
                .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn consent() -> &'static str {
        r#"{"team_satisfied": true, "critic_persuaded": true, "rationale": "settled"}"#
    }

    fn full_scripted_backend() -> ScriptedBackend {
        ScriptedBackend::new()
            .add_rule("create a pool", pool_response())
            .add_rule("Candidate list", selection_response())
            .add_rule("speak as Agent", "A debate contribution.")
            .add_rule("speak as the Planner", "A planner contribution.")
            .add_rule("speak as the Critic", "A critical reply.")
            .add_rule("team_satisfied", consent())
            .add_rule("Synthesize a final counterargument plan", "1. Core point\n  - support")
            .add_rule("Write a counterargument plan", "1. Core point\n  - support")
            .add_rule("transform the following plan", "The final essay.")
            .add_rule("Write a persuasive and coherent counterargumentative essay", "The direct essay.")
    }

    #[test]
    fn persona_debate_produces_a_fully_populated_record() {
        let prompts = PromptSet::builtin();
        let backend = full_scripted_backend();
        let config = RunConfig::new(Method::PersonaDebate, "test-model");
        let ctx = config.context(&backend, &prompts);

        let record = run_persona_debate(&proposition(), &config, &ctx, 0).unwrap();
        assert!(validate_record(&record).is_empty());
        assert_eq!(record.essay, "The final essay.");
        assert_eq!(record.team.as_ref().unwrap().members.len(), 3);
        assert_eq!(
            record.transcript.as_ref().unwrap().terminated_by,
            Termination::Consensus
        );
        assert_eq!(record.plan.as_ref().unwrap().main_points.len(), 1);
    }

    #[test]
    fn pool_failure_is_labeled_with_its_stage() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().add_rule("create a pool", "not a persona line");
        let config = RunConfig::new(Method::PersonaDebate, "test-model");
        let ctx = config.context(&backend, &prompts);

        let err = run_persona_debate(&proposition(), &config, &ctx, 0).unwrap_err();
        assert!(err.to_string().contains("persona_pool"), "{err}");
    }

    #[test]
    fn method_mismatch_is_a_precondition_error() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        let config = RunConfig::new(Method::LlmE2e, "test-model");
        let ctx = config.context(&backend, &prompts);

        let err = run_persona_debate(&proposition(), &config, &ctx, 0).unwrap_err();
        assert!(matches!(err, PipelineError::MethodMismatch { .. }));
    }

    #[test]
    fn llm_e2e_record_has_no_plan_or_transcript() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().push_response("Essay.");
        let config = RunConfig::new(Method::LlmE2e, "test-model");
        let ctx = config.context(&backend, &prompts);

        let record = run_llm_e2e(&proposition(), &config, &ctx, 0).unwrap();
        assert_eq!(record.essay, "Essay.");
        assert!(record.plan.is_none());
        assert!(record.transcript.is_none());
        assert!(record.team.is_none());
        assert!(validate_record(&record).is_empty());
    }

    #[test]
    fn empty_completions_error_after_one_retry() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().with_responses(["", ""]);
        let config = RunConfig::new(Method::LlmE2e, "test-model");
        let ctx = config.context(&backend, &prompts);

        let err = run_llm_e2e(&proposition(), &config, &ctx, 0).unwrap_err();
        assert!(err.to_string().contains("empty completion"), "{err}");
    }

    #[test]
    fn llm_plan_record_carries_a_parsed_plan() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new()
            .with_responses(["1. Main point\n  - sub one\n2. Second", "The planned essay."]);
        let config = RunConfig::new(Method::LlmPlan, "test-model");
        let ctx = config.context(&backend, &prompts);

        let record = run_llm_plan(&proposition(), &config, &ctx, 0).unwrap();
        assert!(validate_record(&record).is_empty());
        let plan = record.plan.as_ref().unwrap();
        assert_eq!(plan.main_points.len(), 2);
        assert_eq!(plan.main_points[0].sub_points, vec!["sub one"]);
        assert_eq!(record.essay, "The planned essay.");
    }

    #[test]
    fn agent_debate_record_has_transcript_but_no_team() {
        let prompts = PromptSet::builtin();
        let backend = full_scripted_backend();
        let config = RunConfig::new(Method::AgentDebate, "test-model");
        let ctx = config.context(&backend, &prompts);

        let record = run_agent_debate(&proposition(), &config, &ctx, 0).unwrap();
        assert!(validate_record(&record).is_empty());
        assert!(record.team.is_none());
        let transcript = record.transcript.as_ref().unwrap();
        assert_eq!(transcript.turns[0].speaker_id, "Planner");
    }

    #[test]
    fn planner_preamble_contains_no_persona_claim() {
        let prompts = PromptSet::builtin();
        let backend = RecordingBackend::new(full_scripted_backend());
        let config = RunConfig::new(Method::AgentDebate, "test-model");
        let ctx = config.context(&backend, &prompts);

        run_agent_debate(&proposition(), &config, &ctx, 0).unwrap();
        for request in backend.chat_requests() {
            let user = &request.messages.last().unwrap().content;
            if user.contains("speak as the Planner") {
                let system = &request.messages[0].content;
                assert!(!system.contains("Claim 0."));
                assert!(!system.contains("Specific Personas"));
            }
        }
    }

    #[test]
    fn write_argument_returns_scripted_essay_verbatim() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().push_response("Essay.");
        let config = RunConfig::new(Method::LlmPlan, "test-model");
        let ctx = config.context(&backend, &prompts);
        let plan = ArgumentPlan {
            main_points: vec![PlanPoint { heading: "Point".into(), sub_points: vec![] }],
            acknowledgment: None,
        };
        assert_eq!(write_argument(&proposition(), &plan, &ctx).unwrap(), "Essay.");
    }

    #[test]
    fn write_argument_rejects_an_empty_plan() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        let config = RunConfig::new(Method::LlmPlan, "test-model");
        let ctx = config.context(&backend, &prompts);
        let plan = ArgumentPlan { main_points: vec![], acknowledgment: None };
        let err = write_argument(&proposition(), &plan, &ctx).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidPlan(_)));
    }

    #[test]
    fn run_experiment_persists_topics_times_samples_records() {
        let prompts = PromptSet::builtin();
        let backend = full_scripted_backend();
        let mut config = RunConfig::new(Method::PersonaDebate, "test-model");
        config.samples_per_topic = 2;
        let ctx = config.context(&backend, &prompts);

        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let topics = vec![
            Proposition::new("t000", "We should make all museums free of charge"),
            Proposition::new("t001", "We should ban homework"),
        ];

        let run_id = run_experiment(&topics, &config, &ctx, &store, 2).unwrap();
        let manifest = store.load_manifest(&run_id).unwrap();
        assert_eq!(manifest.entries.len(), 4);
        assert!(manifest.entries.iter().all(|e| e.status == EntryStatus::Ok));

        let records = store.load_records(&run_id).unwrap();
        assert_eq!(records.len(), 4);
        for record in &records {
            assert!(validate_record(record).is_empty());
        }
    }

    #[test]
    fn one_failing_sample_is_recorded_without_aborting() {
        let prompts = PromptSet::builtin();
        // Second sample gets an empty completion twice and fails.
        let backend = ScriptedBackend::new().with_responses(["Essay.", "", ""]);
        let mut config = RunConfig::new(Method::LlmE2e, "test-model");
        config.samples_per_topic = 2;
        let ctx = config.context(&backend, &prompts);

        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let topics = vec![proposition()];

        let run_id = run_experiment(&topics, &config, &ctx, &store, 1).unwrap();
        let manifest = store.load_manifest(&run_id).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert_eq!(manifest.entries[0].status, EntryStatus::Ok);
        assert_eq!(manifest.entries[1].status, EntryStatus::Failed);
        assert!(manifest.entries[1].error.as_ref().unwrap().contains("empty completion"));

        assert_eq!(store.load_records(&run_id).unwrap().len(), 1);
    }

    #[test]
    fn empty_topic_list_is_a_precondition_error() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        let config = RunConfig::new(Method::LlmE2e, "test-model");
        let ctx = config.context(&backend, &prompts);
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());

        let err = run_experiment(&[], &config, &ctx, &store, 1).unwrap_err();
        assert!(matches!(err, PipelineError::NoTopics));
    }
}
