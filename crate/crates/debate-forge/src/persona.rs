//! Persona pool creation and team selection.
//!
//! Both operations prompt the model for one JSON object per line and parse
//! tolerantly: chatter lines are skipped with a warning unless strict
//! parsing is enabled. Malformed or out-of-bounds results trigger
//! re-prompts with a format reminder before failing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Message};
use crate::context::GenerationContext;
use crate::prompts::{names, number_word};
use crate::types::{Persona, PersonaPool, Proposition, TeamAssignment};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no parseable persona lines after retries")]
    Unparseable,
    #[error("persona line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("persona pool size {got} outside [{min}, {max}] after retries")]
    PoolSize { got: usize, min: usize, max: usize },
    #[error("pool of {pool} personas is too small for a team of {team}")]
    PoolTooSmall { pool: usize, team: usize },
    #[error("selection named agent_id {0} absent from the pool")]
    UnknownAgent(u32),
    #[error("selected {got} distinct personas after retries, need {need}")]
    TooFewSelections { got: usize, need: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub pool_min: usize,
    pub pool_max: usize,
    pub format_retries: u32,
    pub strict_parsing: bool,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self { pool_min: 5, pool_max: 10, format_retries: 2, strict_parsing: false }
    }
}

/// One model output line together with the persona parsed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaLine {
    pub raw: String,
    pub parsed: Persona,
}

#[derive(Deserialize)]
struct RawPersonaLine {
    agent_id: u32,
    description: String,
    claim: String,
    #[serde(default)]
    reason: Option<String>,
}

/// Parses one persona JSON object per line. Non-object lines are skipped
/// with a warning, or rejected when `strict` is set.
pub fn parse_persona_lines(text: &str, strict: bool) -> Result<Vec<PersonaLine>, PersonaError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<RawPersonaLine>(trimmed) {
            Ok(parsed) if !parsed.description.trim().is_empty() && !parsed.claim.trim().is_empty() => {
                lines.push(PersonaLine {
                    raw: trimmed.to_string(),
                    parsed: Persona {
                        agent_id: parsed.agent_id,
                        description: parsed.description,
                        claim: parsed.claim,
                        selection_reason: parsed.reason,
                    },
                });
            }
            Ok(_) => {
                if strict {
                    return Err(PersonaError::MalformedLine {
                        line: i + 1,
                        message: "description or claim empty".to_string(),
                    });
                }
                log::warn!("persona line {} has an empty description or claim, skipping", i + 1);
            }
            Err(e) => {
                if strict {
                    return Err(PersonaError::MalformedLine { line: i + 1, message: e.to_string() });
                }
                log::warn!("skipping non-persona line {}: {trimmed:?}", i + 1);
            }
        }
    }
    Ok(lines)
}

/// Reassigns ids 0..k-1 when the model produced duplicates; ids are local
/// bookkeeping, not semantics.
fn reindex_if_duplicated(personas: &mut [Persona]) {
    let mut seen = std::collections::HashSet::new();
    let has_duplicates = personas.iter().any(|p| !seen.insert(p.agent_id));
    if has_duplicates {
        log::warn!("duplicate agent_ids in persona pool, reindexing sequentially");
        for (i, persona) in personas.iter_mut().enumerate() {
            persona.agent_id = i as u32;
        }
    }
}

const FORMAT_REMINDER: &str =
    "Reply with one json object per line in the specified format, and nothing else.";

/// Prompts the model for a pool of personas refuting the proposition from
/// distinct perspectives, retrying when parsing fails or the pool size is
/// out of bounds.
pub fn create_persona_pool(
    proposition: &Proposition,
    config: &PersonaConfig,
    ctx: &GenerationContext,
) -> Result<PersonaPool, PersonaError> {
    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        names::PERSONA_POOL,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("##pool_min", config.pool_min.to_string().as_str()),
            ("##pool_max", config.pool_max.to_string().as_str()),
        ],
    );

    let mut messages = vec![Message::system(&system), Message::user(&user)];
    let mut last_size = 0usize;
    for _attempt in 0..=config.format_retries {
        let response = ctx.chat(messages.clone())?;
        let mut personas: Vec<Persona> = parse_persona_lines(&response, config.strict_parsing)?
            .into_iter()
            .map(|line| line.parsed)
            .collect();
        reindex_if_duplicated(&mut personas);

        last_size = personas.len();
        if (config.pool_min..=config.pool_max).contains(&personas.len()) {
            return Ok(PersonaPool {
                proposition_id: proposition.id.clone(),
                personas,
            });
        }

        log::warn!(
            "persona pool of {} outside [{}, {}], re-prompting",
            personas.len(),
            config.pool_min,
            config.pool_max
        );
        messages.push(Message::assistant(response));
        messages.push(Message::user(FORMAT_REMINDER));
    }

    if last_size == 0 {
        Err(PersonaError::Unparseable)
    } else {
        Err(PersonaError::PoolSize { got: last_size, min: config.pool_min, max: config.pool_max })
    }
}

fn candidate_list(pool: &PersonaPool) -> String {
    pool.personas
        .iter()
        .map(|p| {
            serde_json::json!({
                "agent_id": p.agent_id,
                "description": p.description,
                "claim": p.claim,
            })
            .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the model to pick `team_size` personas from the pool, each with a
/// selection reason. Pool personas are authoritative; the response only
/// contributes ids and reasons.
pub fn select_team(
    pool: &PersonaPool,
    proposition: &Proposition,
    team_size: usize,
    config: &PersonaConfig,
    ctx: &GenerationContext,
) -> Result<TeamAssignment, PersonaError> {
    if pool.personas.len() < team_size {
        return Err(PersonaError::PoolTooSmall { pool: pool.personas.len(), team: team_size });
    }

    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        names::PERSONA_SELECT,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("###candidate_list", candidate_list(pool).as_str()),
            ("##team_size", number_word(team_size).as_str()),
        ],
    );

    let mut messages = vec![Message::system(&system), Message::user(&user)];
    let mut last_error = PersonaError::TooFewSelections { got: 0, need: team_size };
    for _attempt in 0..=config.format_retries {
        let response = ctx.chat(messages.clone())?;
        match parse_selection(pool, &response, team_size, config.strict_parsing) {
            Ok(team) => return Ok(team),
            Err(e) => {
                log::warn!("team selection attempt failed: {e}");
                last_error = e;
                messages.push(Message::assistant(response));
                messages.push(Message::user(FORMAT_REMINDER));
            }
        }
    }
    Err(last_error)
}

fn parse_selection(
    pool: &PersonaPool,
    response: &str,
    team_size: usize,
    strict: bool,
) -> Result<TeamAssignment, PersonaError> {
    let mut members: Vec<Persona> = Vec::new();
    for line in parse_persona_lines(response, strict)? {
        let agent_id = line.parsed.agent_id;
        let reason = match line.parsed.selection_reason {
            Some(reason) if !reason.trim().is_empty() => reason,
            _ => {
                log::warn!("selection line for agent {agent_id} has no reason, skipping");
                continue;
            }
        };
        let from_pool = pool.get(agent_id).ok_or(PersonaError::UnknownAgent(agent_id))?;
        if members.iter().any(|m| m.agent_id == agent_id) {
            log::warn!("agent {agent_id} selected twice, ignoring duplicate");
            continue;
        }
        let mut member = from_pool.clone();
        member.selection_reason = Some(reason);
        members.push(member);
    }

    if members.len() < team_size {
        return Err(PersonaError::TooFewSelections { got: members.len(), need: team_size });
    }
    if members.len() > team_size {
        log::warn!("model selected {} personas, keeping the first {team_size}", members.len());
        members.truncate(team_size);
    }
    Ok(TeamAssignment { members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, ScriptedBackend};
    use crate::prompts::PromptSet;

    fn proposition() -> Proposition {
        Proposition::new("t000", "We should make all museums free of charge")
    }

    fn pool_line(id: u32, description: &str, claim: &str) -> String {
        serde_json::json!({ "agent_id": id, "description": description, "claim": claim })
            .to_string()
    }

    fn six_line_pool() -> String {
        (0..6)
            .map(|i| pool_line(i, &format!("Persona {i}"), &format!("Claim {i}.")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn ctx<'a>(backend: &'a dyn Backend, prompts: &'a PromptSet) -> GenerationContext<'a> {
        GenerationContext::new(backend, prompts, "test-model")
    }

    #[test]
    fn six_well_formed_lines_make_a_pool_of_six() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().push_response(six_line_pool());
        let pool =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &ctx(&backend, &prompts))
                .unwrap();
        assert_eq!(pool.personas.len(), 6);
        assert_eq!(pool.proposition_id, "t000");
    }

    #[test]
    fn undersized_pool_errors_after_retries() {
        let prompts = PromptSet::builtin();
        let three = (0..3)
            .map(|i| pool_line(i, "d", "c"))
            .collect::<Vec<_>>()
            .join("\n");
        let backend =
            ScriptedBackend::new().with_responses([three.clone(), three.clone(), three]);
        let err =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &ctx(&backend, &prompts))
                .unwrap_err();
        assert!(matches!(err, PersonaError::PoolSize { got: 3, min: 5, max: 10 }));
    }

    #[test]
    fn duplicate_agent_ids_are_reindexed() {
        let prompts = PromptSet::builtin();
        let lines = [
            pool_line(0, "first", "a"),
            pool_line(0, "second", "b"),
            pool_line(1, "third", "c"),
            pool_line(2, "fourth", "d"),
            pool_line(3, "fifth", "e"),
        ]
        .join("\n");
        let backend = ScriptedBackend::new().push_response(lines);
        let pool =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &ctx(&backend, &prompts))
                .unwrap();
        let ids: Vec<u32> = pool.personas.iter().map(|p| p.agent_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn chatter_lines_are_tolerated() {
        let prompts = PromptSet::builtin();
        let response = format!("Sure! Here are the personas:\n{}\nHope they help.", six_line_pool());
        let backend = ScriptedBackend::new().push_response(response);
        let pool =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &ctx(&backend, &prompts))
                .unwrap();
        assert_eq!(pool.personas.len(), 6);
    }

    #[test]
    fn strict_parsing_rejects_chatter() {
        let err = parse_persona_lines("not json", true).unwrap_err();
        assert!(matches!(err, PersonaError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn unparseable_output_errors_after_retries() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new().with_responses(["nah", "nah", "nah"]);
        let err =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &ctx(&backend, &prompts))
                .unwrap_err();
        assert!(matches!(err, PersonaError::Unparseable));
    }

    fn pool_of(n: u32) -> PersonaPool {
        PersonaPool {
            proposition_id: "t000".to_string(),
            personas: (0..n)
                .map(|i| Persona {
                    agent_id: i,
                    description: format!("Persona {i}"),
                    claim: format!("Claim {i}."),
                    selection_reason: None,
                })
                .collect(),
        }
    }

    fn selection_line(id: u32, reason: &str) -> String {
        serde_json::json!({
            "agent_id": id,
            "description": format!("Persona {id}"),
            "claim": format!("Claim {id}."),
            "reason": reason,
        })
        .to_string()
    }

    #[test]
    fn selection_picks_named_personas_with_reasons() {
        let prompts = PromptSet::builtin();
        let response = [
            selection_line(0, "grounded view"),
            selection_line(2, "economic angle"),
            selection_line(5, "community voice"),
        ]
        .join("\n");
        let backend = ScriptedBackend::new().push_response(response);
        let team = select_team(
            &pool_of(6),
            &proposition(),
            3,
            &PersonaConfig::default(),
            &ctx(&backend, &prompts),
        )
        .unwrap();

        let ids: Vec<u32> = team.members.iter().map(|m| m.agent_id).collect();
        assert_eq!(ids, vec![0, 2, 5]);
        assert_eq!(team.members[0].selection_reason.as_deref(), Some("grounded view"));
        // Pool personas stay authoritative.
        assert_eq!(team.members[1].description, "Persona 2");
    }

    #[test]
    fn unknown_agent_id_fails_after_retry() {
        let prompts = PromptSet::builtin();
        let bad = [selection_line(0, "r"), selection_line(9, "r"), selection_line(1, "r")]
            .join("\n");
        let backend =
            ScriptedBackend::new().with_responses([bad.clone(), bad.clone(), bad]);
        let err = select_team(
            &pool_of(6),
            &proposition(),
            3,
            &PersonaConfig::default(),
            &ctx(&backend, &prompts),
        )
        .unwrap_err();
        assert!(matches!(err, PersonaError::UnknownAgent(9)));
    }

    #[test]
    fn small_pool_is_a_precondition_error() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        let err = select_team(
            &pool_of(2),
            &proposition(),
            3,
            &PersonaConfig::default(),
            &ctx(&backend, &prompts),
        )
        .unwrap_err();
        assert!(matches!(err, PersonaError::PoolTooSmall { pool: 2, team: 3 }));
    }

    #[test]
    fn create_then_select_yields_a_subset_of_the_pool() {
        let prompts = PromptSet::builtin();
        let selection = [
            selection_line(1, "sharp"),
            selection_line(3, "broad"),
            selection_line(4, "local"),
        ]
        .join("\n");
        let backend = ScriptedBackend::new()
            .add_rule("create a pool", &six_line_pool())
            .add_rule("Candidate list", &selection);
        let context = ctx(&backend, &prompts);

        let pool =
            create_persona_pool(&proposition(), &PersonaConfig::default(), &context).unwrap();
        let team =
            select_team(&pool, &proposition(), 3, &PersonaConfig::default(), &context).unwrap();

        for member in &team.members {
            assert!(pool.contains_agent(member.agent_id));
            assert!(member.selection_reason.is_some());
        }
    }

    #[test]
    fn oversized_selection_is_truncated_to_team_size() {
        let prompts = PromptSet::builtin();
        let response = (0..5).map(|i| selection_line(i, "r")).collect::<Vec<_>>().join("\n");
        let backend = ScriptedBackend::new().push_response(response);
        let team = select_team(
            &pool_of(6),
            &proposition(),
            3,
            &PersonaConfig::default(),
            &ctx(&backend, &prompts),
        )
        .unwrap();
        assert_eq!(team.members.len(), 3);
    }
}
