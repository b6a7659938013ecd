//! LLM-as-judge scoring against a rubric prompt asset.

use crate::backend::Message;
use crate::context::EvalContext;
use crate::prompts::names;
use crate::types::Proposition;

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aspect {
    Relevance,
    Quality,
}

impl Aspect {
    fn template(&self) -> &'static str {
        match self {
            Aspect::Relevance => names::JUDGE_RELEVANCE,
            Aspect::Quality => names::JUDGE_QUALITY,
        }
    }
}

impl std::fmt::Display for Aspect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aspect::Relevance => "relevance",
            Aspect::Quality => "quality",
        })
    }
}

/// First numeric token in the text, so labeled replies like "Score: 3.5"
/// parse too.
fn parse_first_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            let mut seen_dot = false;
            while i < bytes.len()
                && (bytes[i].is_ascii_digit() || (bytes[i] == b'.' && !seen_dot))
            {
                if bytes[i] == b'.' {
                    seen_dot = true;
                }
                i += 1;
            }
            let token = text[start..i].trim_end_matches('.');
            if let Ok(value) = token.parse::<f64>() {
                return Some(value);
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Scores one essay for one aspect on the rubric's scale. An unparseable
/// or out-of-range reply is retried once, then reported as an error.
pub fn judge(
    essay: &str,
    proposition: &Proposition,
    aspect: Aspect,
    ctx: &EvalContext,
) -> Result<f64, MetricsError> {
    if essay.trim().is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let (min, max) = ctx.judge_scale;
    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(
        aspect.template(),
        &[
            ("{proposition}", proposition.statement.as_str()),
            ("{essay}", essay),
        ],
    );

    let first = ctx.chat(vec![Message::system(&system), Message::user(&user)])?;
    if let Some(score) = parse_first_number(&first).filter(|s| (min..=max).contains(s)) {
        return Ok(score);
    }

    let retry = ctx.chat(vec![
        Message::system(&system),
        Message::user(&user),
        Message::assistant(&first),
        Message::user(format!(
            "Reply with only a numeric score between {min} and {max}."
        )),
    ])?;
    parse_first_number(&retry)
        .filter(|s| (min..=max).contains(s))
        .ok_or_else(|| {
            MetricsError::JudgeScore(format!(
                "{aspect} reply {retry:?} has no score in [{min}, {max}]"
            ))
        })
}
