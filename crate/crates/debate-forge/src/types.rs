//! Shared domain types and record validation.
//!
//! Every type here is an immutable value with a canonical JSON encoding
//! (snake_case field names), so instances can be freely shared between
//! threads and persisted as JSONL.

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// A controversial input claim the pipeline must refute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub id: String,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

impl Proposition {
    pub fn new(id: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            domain_tag: None,
        }
    }
}

/// An agent identity: a one-sentence description plus a stance-bearing claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub agent_id: u32,
    pub description: String,
    pub claim: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_reason: Option<String>,
}

/// The candidate personas generated for one proposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaPool {
    pub proposition_id: String,
    pub personas: Vec<Persona>,
}

impl PersonaPool {
    pub fn contains_agent(&self, agent_id: u32) -> bool {
        self.personas.iter().any(|p| p.agent_id == agent_id)
    }

    pub fn get(&self, agent_id: u32) -> Option<&Persona> {
        self.personas.iter().find(|p| p.agent_id == agent_id)
    }
}

/// The personas picked from the pool to form the main team.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamAssignment {
    pub members: Vec<Persona>,
}

/// Who produced a debate turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    MainTeamMember,
    Critic,
    Moderator,
}

/// One utterance in a debate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_id: String,
    pub role: TurnRole,
    pub round: u32,
    pub content: String,
}

/// Why a debate stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Consensus,
    RoundCap,
}

/// The ordered turns of a finished debate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub turns: Vec<Turn>,
    pub terminated_by: Termination,
}

impl DebateTranscript {
    /// Highest round number present, 0 for an empty transcript.
    pub fn round_count(&self) -> u32 {
        self.turns.iter().map(|t| t.round).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.round_count() >= 1 && !self.turns.iter().any(|t| t.role == TurnRole::Critic) {
            violations.push("transcript has no critic turn".to_string());
        }
        let mut prev = 0;
        for turn in &self.turns {
            if turn.round == 0 {
                violations.push(format!("turn by {} has round 0", turn.speaker_id));
            }
            if turn.round < prev {
                violations.push(format!(
                    "round numbers decrease at turn by {}",
                    turn.speaker_id
                ));
            }
            prev = turn.round;
        }
        violations
    }
}

/// One outline point with optional supporting sub-points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub heading: String,
    #[serde(default)]
    pub sub_points: Vec<String>,
}

/// The high-level logic flow guiding essay writing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentPlan {
    pub main_points: Vec<PlanPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledgment: Option<String>,
}

impl ArgumentPlan {
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.main_points.is_empty() {
            violations.push("plan has no main points".to_string());
        }
        for point in &self.main_points {
            if point.heading.trim().is_empty() {
                violations.push("plan heading empty".to_string());
            }
        }
        violations
    }
}

/// The generation method that produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "persona_debate")]
    PersonaDebate,
    #[serde(rename = "llm_e2e")]
    LlmE2e,
    #[serde(rename = "llm_plan")]
    LlmPlan,
    #[serde(rename = "agent_debate")]
    AgentDebate,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PersonaDebate => "persona_debate",
            Method::LlmE2e => "llm_e2e",
            Method::LlmPlan => "llm_plan",
            Method::AgentDebate => "agent_debate",
        }
    }

    pub fn requires_plan(&self) -> bool {
        !matches!(self, Method::LlmE2e)
    }

    pub fn requires_transcript(&self) -> bool {
        matches!(self, Method::PersonaDebate | Method::AgentDebate)
    }

    pub fn requires_team(&self) -> bool {
        matches!(self, Method::PersonaDebate)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persona_debate" => Ok(Method::PersonaDebate),
            "llm_e2e" => Ok(Method::LlmE2e),
            "llm_plan" => Ok(Method::LlmPlan),
            "agent_debate" => Ok(Method::AgentDebate),
            other => Err(format!(
                "unknown method '{other}' (expected persona_debate, llm_e2e, llm_plan or agent_debate)"
            )),
        }
    }
}

/// One produced essay with its provenance artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub proposition_id: String,
    pub method: Method,
    pub sample_index: u32,
    pub essay: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ArgumentPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<DebateTranscript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<TeamAssignment>,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
}

/// Checks every invariant of a record, returning one message per violation.
/// An empty result means the record is valid.
pub fn validate_record(record: &GenerationRecord) -> Vec<String> {
    let mut violations = Vec::new();

    if record.proposition_id.trim().is_empty() {
        violations.push("proposition_id empty".to_string());
    }
    if record.essay.trim().is_empty() {
        violations.push("essay empty".to_string());
    }

    match (record.method.requires_plan(), record.plan.is_some()) {
        (true, false) => violations.push("plan missing for plan-based method".to_string()),
        (false, true) => violations.push("plan present for plan-free method".to_string()),
        _ => {}
    }
    match (record.method.requires_transcript(), record.transcript.is_some()) {
        (true, false) => violations.push("transcript missing for debate method".to_string()),
        (false, true) => violations.push("transcript present for non-debate method".to_string()),
        _ => {}
    }
    match (record.method.requires_team(), record.team.is_some()) {
        (true, false) => violations.push("team missing for persona method".to_string()),
        (false, true) => violations.push("team present for non-persona method".to_string()),
        _ => {}
    }

    if let Some(plan) = &record.plan {
        violations.extend(plan.validate());
    }
    if let Some(transcript) = &record.transcript {
        violations.extend(transcript.validate());
    }
    if let Some(team) = &record.team {
        violations.extend(validate_team(team));
    }

    violations
}

fn validate_team(team: &TeamAssignment) -> Vec<String> {
    let mut violations = Vec::new();
    if team.members.is_empty() {
        violations.push("team is empty".to_string());
    }
    let mut seen = std::collections::HashSet::new();
    for member in &team.members {
        if !seen.insert(member.agent_id) {
            violations.push(format!("duplicate agent_id {} in team", member.agent_id));
        }
        if member.description.trim().is_empty() {
            violations.push(format!("persona {} description empty", member.agent_id));
        }
        if member.claim.trim().is_empty() {
            violations.push(format!("persona {} claim empty", member.agent_id));
        }
        match &member.selection_reason {
            Some(reason) if !reason.trim().is_empty() => {}
            _ => violations.push(format!("team member {} has no selection_reason", member.agent_id)),
        }
    }
    violations
}

/// Current UTC time, overridable through `SOURCE_DATE_EPOCH` for
/// reproducible outputs.
pub fn now_utc() -> DateTime<Utc> {
    if let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(secs) = raw.trim().parse::<i64>() {
            if let Some(ts) = Utc.timestamp_opt(secs, 0).single() {
                return ts;
            }
        }
    }
    Utc::now()
}
