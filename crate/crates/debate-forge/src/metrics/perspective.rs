//! Perspective diversity: how many distinct viewpoints the M arguments for
//! one input cover.
//!
//! Each argument's main opinion points are extracted with one chat call.
//! Every point is embedded once, then scored by its maximum cosine
//! similarity against the points of the other M-1 arguments; an argument
//! scores the mean over its points, and the aggregate is the mean over
//! scorable arguments, x 100. Lower is more diverse.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::{EmbedRequest, Message};
use crate::context::EvalContext;
use crate::prompts::names;

use super::{cosine_similarity, mean_sorted, MetricsError};

/// The extracted opinion points of one argument. `warning` is set when
/// extraction returned nothing usable after a retry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionPointSet {
    pub argument_index: usize,
    pub points: Vec<String>,
    #[serde(default)]
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveArgument {
    pub argument_index: usize,
    pub points: Vec<String>,
    pub per_point_max_sim: Vec<f64>,
    /// Mean of `per_point_max_sim`; absent when the argument was excluded.
    pub score: Option<f64>,
    #[serde(default)]
    pub extraction_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveBreakdown {
    pub per_argument: Vec<PerspectiveArgument>,
    /// Mean of the included per-argument scores, x 100.
    pub aggregate: f64,
    /// Indices of arguments excluded from the aggregate.
    pub excluded: Vec<usize>,
}

fn parse_bullet_lines(text: &str) -> Vec<String> {
    let mut points = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        let content = line
            .strip_prefix("- ")
            .or_else(|| line.strip_prefix('-'))
            .or_else(|| line.strip_prefix("* "))
            .or_else(|| line.strip_prefix('•'))
            .or_else(|| {
                let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
                (rest.len() < line.len()).then(|| rest.strip_prefix(['.', ')'])).flatten()
            });
        if let Some(content) = content {
            let content = content.trim();
            if !content.is_empty() {
                points.push(content.to_string());
            }
        }
    }
    points
}

/// Prompts for the main opinion points of one essay as a bullet list. An
/// unparseable reply is retried once, then yields an empty set with the
/// warning flag raised.
pub fn extract_opinion_points(
    essay: &str,
    argument_index: usize,
    ctx: &EvalContext,
) -> Result<OpinionPointSet, MetricsError> {
    if essay.trim().is_empty() {
        return Err(MetricsError::EmptyText);
    }

    let system = ctx.prompts.get(names::NEUTRAL_SYSTEM).trim_end().to_string();
    let user = ctx.prompts.render(names::OPINION_POINTS, &[("{essay}", essay)]);

    let first = ctx.chat(vec![Message::system(&system), Message::user(&user)])?;
    let points = parse_bullet_lines(&first);
    if !points.is_empty() {
        return Ok(OpinionPointSet { argument_index, points, warning: false });
    }

    let retry = ctx.chat(vec![
        Message::system(&system),
        Message::user(&user),
        Message::assistant(&first),
        Message::user("List the opinion points only, one per line, each starting with \"- \"."),
    ])?;
    let points = parse_bullet_lines(&retry);
    if points.is_empty() {
        log::warn!("opinion-point extraction produced no bullets for argument {argument_index}");
        return Ok(OpinionPointSet { argument_index, points: Vec::new(), warning: true });
    }
    Ok(OpinionPointSet { argument_index, points, warning: false })
}

/// The novel diversity metric over extracted opinion points.
///
/// Arguments with no points, or with no other argument's points to compare
/// against, are excluded from the aggregate and listed in `excluded`.
pub fn perspective_diversity(
    arguments: &[String],
    ctx: &EvalContext,
) -> Result<PerspectiveBreakdown, MetricsError> {
    if arguments.len() < 2 {
        return Err(MetricsError::TooFewOutputs(arguments.len()));
    }

    let point_sets: Vec<OpinionPointSet> = arguments
        .iter()
        .enumerate()
        .map(|(m, essay)| extract_opinion_points(essay, m, ctx))
        .collect::<Result<_, _>>()?;

    if point_sets.iter().all(|set| set.points.is_empty()) {
        return Err(MetricsError::NoOpinionPoints);
    }

    // Embed each distinct point text once per report.
    let unique_texts: Vec<String> = point_sets
        .iter()
        .flat_map(|set| set.points.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = ctx.backend.embed(&EmbedRequest {
        texts: unique_texts.clone(),
        model_id: ctx.embedding_model_id.clone(),
    })?;
    let embedding_of: HashMap<&str, &[f64]> = unique_texts
        .iter()
        .map(String::as_str)
        .zip(vectors.iter().map(|v| v.values.as_slice()))
        .collect();

    let mut per_argument = Vec::with_capacity(point_sets.len());
    let mut excluded = Vec::new();
    let mut included_scores = Vec::new();

    for set in &point_sets {
        let other_points: Vec<&str> = point_sets
            .iter()
            .filter(|other| other.argument_index != set.argument_index)
            .flat_map(|other| other.points.iter().map(String::as_str))
            .collect();

        if set.points.is_empty() || other_points.is_empty() {
            excluded.push(set.argument_index);
            per_argument.push(PerspectiveArgument {
                argument_index: set.argument_index,
                points: set.points.clone(),
                per_point_max_sim: Vec::new(),
                score: None,
                extraction_warning: set.warning,
            });
            continue;
        }

        let mut per_point_max_sim = Vec::with_capacity(set.points.len());
        for point in &set.points {
            let point_vec = embedding_of[point.as_str()];
            let mut best = f64::NEG_INFINITY;
            for other in &other_points {
                let sim = cosine_similarity(point_vec, embedding_of[*other])?;
                best = best.max(sim);
            }
            per_point_max_sim.push(best);
        }
        let score = per_point_max_sim.iter().sum::<f64>() / per_point_max_sim.len() as f64;
        included_scores.push(score);
        per_argument.push(PerspectiveArgument {
            argument_index: set.argument_index,
            points: set.points.clone(),
            per_point_max_sim,
            score: Some(score),
            extraction_warning: set.warning,
        });
    }

    if included_scores.is_empty() {
        return Err(MetricsError::NoComparablePoints);
    }

    Ok(PerspectiveBreakdown {
        per_argument,
        aggregate: mean_sorted(&included_scores) * 100.0,
        excluded,
    })
}
