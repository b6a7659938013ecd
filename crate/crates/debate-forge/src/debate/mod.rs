//! The critic-checked multi-agent debate that develops an argument plan.
//!
//! Each round, every main-team member speaks once in team order, then the
//! critic replies; every turn is conditioned on the full shared discussion
//! plus the speaker's own role preamble. A persona-free moderator call then
//! decides whether the team is satisfied and the critic persuaded; the loop
//! stops on consensus or at the round cap.

pub mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Message};
use crate::context::GenerationContext;
use crate::prompts::{agent_name, agent_name_list, names, number_word};
use crate::types::{
    ArgumentPlan, DebateTranscript, Persona, Proposition, TeamAssignment, Termination, Turn,
    TurnRole,
};

pub use plan::{parse_plan, render_plan};

#[derive(Debug, Error)]
pub enum DebateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("debate team is empty")]
    EmptyTeam,
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("plan has no main points after {0} retries")]
    EmptyPlan(u32),
    #[error("invalid debate config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub team_size: u32,
    pub round_cap: u32,
    pub consensus_check_every: u32,
    pub plan_max_main_points: u32,
    pub format_retries: u32,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            team_size: 3,
            round_cap: 6,
            consensus_check_every: 1,
            plan_max_main_points: 5,
            format_retries: 2,
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<(), DebateError> {
        if self.round_cap < 1 {
            return Err(DebateError::InvalidConfig("round_cap must be >= 1".into()));
        }
        if self.consensus_check_every < 1 {
            return Err(DebateError::InvalidConfig(
                "consensus_check_every must be >= 1".into(),
            ));
        }
        if self.plan_max_main_points < 1 {
            return Err(DebateError::InvalidConfig(
                "plan_max_main_points must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_for_team(&self) -> Result<(), DebateError> {
        self.validate()?;
        if self.team_size < 2 {
            return Err(DebateError::InvalidConfig("team_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// The moderator's stop decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusVerdict {
    pub team_satisfied: bool,
    pub critic_persuaded: bool,
    pub rationale: String,
}

struct Speaker {
    /// Name recorded in the transcript ("Agent A", "Planner", "Critic").
    id: String,
    /// Phrase used when prompting ("Agent A", "the Planner", "the Critic").
    spoken_as: String,
    role: TurnRole,
    preamble: String,
}

/// Discussion text shown to agents and the moderator; moderator verdicts
/// are control signals and stay out of it.
fn render_discussion(turns: &[Turn]) -> String {
    let spoken: Vec<String> = turns
        .iter()
        .filter(|t| t.role != TurnRole::Moderator)
        .map(|t| format!("{}: {}", t.speaker_id, t.content))
        .collect();
    if spoken.is_empty() {
        "(The discussion has not started yet.)".to_string()
    } else {
        spoken.join("\n\n")
    }
}

fn join_blocks(a: &str, b: &str) -> String {
    format!("{}\n\n{}", a.trim_end(), b.trim_end())
}

/// Extracts the outermost `{...}` span so verdicts survive model chatter.
pub(crate) fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn parse_verdict(text: &str) -> Option<ConsensusVerdict> {
    serde_json::from_str(extract_json_object(text)?).ok()
}

fn moderator_verdict(
    proposition: &Proposition,
    turns: &[Turn],
    ctx: &GenerationContext,
) -> Result<(ConsensusVerdict, String), DebateError> {
    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        names::DEBATE_VERDICT,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("##discussion", &render_discussion(turns)),
        ],
    );

    let first = ctx.chat(vec![Message::system(&system), Message::user(&user)])?;
    if let Some(verdict) = parse_verdict(&first) {
        return Ok((verdict, first));
    }

    let retry = ctx.chat(vec![
        Message::system(&system),
        Message::user(&user),
        Message::assistant(&first),
        Message::user("Reply with only the json object in the specified format."),
    ])?;
    if let Some(verdict) = parse_verdict(&retry) {
        return Ok((verdict, retry));
    }

    log::warn!("moderator verdict unparseable after retry; treating as not-consensus");
    Ok((
        ConsensusVerdict {
            team_satisfied: false,
            critic_persuaded: false,
            rationale: "verdict unparseable; debate continues".to_string(),
        },
        retry,
    ))
}

fn debate_loop(
    proposition: &Proposition,
    participants: &str,
    speakers: &[Speaker],
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<DebateTranscript, DebateError> {
    let background = ctx.prompts.render(
        names::DEBATE_BACKGROUND,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("##participants", participants),
        ],
    );

    let mut turns: Vec<Turn> = Vec::new();
    let mut terminated_by = Termination::RoundCap;

    'rounds: for round in 1..=config.round_cap {
        for speaker in speakers {
            let user = ctx.prompts.render(
                names::DEBATE_TURN,
                &[
                    ("##discussion", render_discussion(&turns).as_str()),
                    ("##speaker_name", speaker.spoken_as.as_str()),
                ],
            );
            let content = ctx.chat(vec![
                Message::system(join_blocks(&background, &speaker.preamble)),
                Message::user(user),
            ])?;
            turns.push(Turn {
                speaker_id: speaker.id.clone(),
                role: speaker.role,
                round,
                content,
            });
        }

        if round % config.consensus_check_every == 0 {
            let (verdict, raw) = moderator_verdict(proposition, &turns, ctx)?;
            turns.push(Turn {
                speaker_id: "Moderator".to_string(),
                role: TurnRole::Moderator,
                round,
                content: raw,
            });
            if verdict.team_satisfied && verdict.critic_persuaded {
                terminated_by = Termination::Consensus;
                break 'rounds;
            }
        }
    }

    Ok(DebateTranscript { turns, terminated_by })
}

fn critic_speaker(ctx: &GenerationContext) -> Speaker {
    Speaker {
        id: "Critic".to_string(),
        spoken_as: "the Critic".to_string(),
        role: TurnRole::Critic,
        preamble: ctx.prompts.get(names::DEBATE_CRITIC).trim_end().to_string(),
    }
}

fn team_roster(members: &[Persona]) -> String {
    members
        .iter()
        .enumerate()
        .map(|(i, p)| format!("\t- {}: {}: {};", agent_name(i), p.description, p.claim))
        .collect::<Vec<_>>()
        .join("\n")
}

fn team_participants(members: &[Persona]) -> String {
    let mut lines = vec![format!(
        "A Main Team of {} members opposing the proposition:",
        number_word(members.len())
    )];
    for (i, member) in members.iter().enumerate() {
        lines.push(format!("- {}: {}", agent_name(i), member.description));
    }
    lines.push("A Critic supporting the proposition.".to_string());
    lines.join("\n")
}

/// Runs the persona-team debate: team members speak in order, the critic
/// replies, the moderator checks for consensus.
pub fn run_debate(
    proposition: &Proposition,
    team: &TeamAssignment,
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<DebateTranscript, DebateError> {
    config.validate()?;
    if team.members.is_empty() {
        return Err(DebateError::EmptyTeam);
    }

    let team_block = ctx.prompts.render(
        names::DEBATE_MAIN_TEAM,
        &[
            ("##team_size", number_word(team.members.len()).as_str()),
            ("##agent_names", agent_name_list(team.members.len()).as_str()),
            ("##team_roster", team_roster(&team.members).as_str()),
        ],
    );

    let mut speakers: Vec<Speaker> = team
        .members
        .iter()
        .enumerate()
        .map(|(i, _)| Speaker {
            id: agent_name(i),
            spoken_as: agent_name(i),
            role: TurnRole::MainTeamMember,
            preamble: team_block.trim_end().to_string(),
        })
        .collect();
    speakers.push(critic_speaker(ctx));

    debate_loop(
        proposition,
        &team_participants(&team.members),
        &speakers,
        config,
        ctx,
    )
}

/// Runs the persona-free two-agent variant: a single planner debates the
/// critic using the same loop and termination rules.
pub fn run_planner_critic_debate(
    proposition: &Proposition,
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<DebateTranscript, DebateError> {
    config.validate()?;

    let speakers = vec![
        Speaker {
            id: "Planner".to_string(),
            spoken_as: "the Planner".to_string(),
            role: TurnRole::MainTeamMember,
            preamble: ctx.prompts.get(names::DEBATE_PLANNER).trim_end().to_string(),
        },
        critic_speaker(ctx),
    ];
    let participants =
        "A Planner opposing the proposition.\nA Critic supporting the proposition.";

    debate_loop(proposition, participants, &speakers, config, ctx)
}

fn plan_request_loop(
    user: String,
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<ArgumentPlan, DebateError> {
    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let mut messages = vec![Message::system(&system), Message::user(user)];
    for attempt in 0..=config.format_retries {
        let response = ctx.chat(messages.clone())?;
        let plan = parse_plan(&response);
        if !plan.main_points.is_empty() {
            return Ok(plan);
        }
        log::warn!("plan attempt {} had no main points", attempt + 1);
        messages.push(Message::assistant(response));
        messages.push(Message::user(
            "Format the plan exactly as the numbered outline specified, with one item per line.",
        ));
    }
    Err(DebateError::EmptyPlan(config.format_retries))
}

/// Distills a finished discussion into an argument plan with one
/// persona-free call.
pub fn synthesize_plan(
    proposition: &Proposition,
    transcript: &DebateTranscript,
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<ArgumentPlan, DebateError> {
    if transcript.turns.is_empty() {
        return Err(DebateError::EmptyTranscript);
    }

    let user = ctx.prompts.render(
        names::PLAN_SYNTHESIS,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("##discussion", render_discussion(&transcript.turns).as_str()),
            ("##plan_max_main_points", config.plan_max_main_points.to_string().as_str()),
        ],
    );
    plan_request_loop(user, config, ctx)
}

/// One-shot plan generation without a debate, for the plan-then-write
/// baseline. Same outline structure and parser as plan synthesis.
pub fn generate_plan_direct(
    proposition: &Proposition,
    config: &DebateConfig,
    ctx: &GenerationContext,
) -> Result<ArgumentPlan, DebateError> {
    let user = ctx.prompts.render(
        names::PLAN_DIRECT,
        &[
            ("##input_proposition", proposition.statement.as_str()),
            ("##plan_max_main_points", config.plan_max_main_points.to_string().as_str()),
        ],
    );
    plan_request_loop(user, config, ctx)
}
