//! Automatic evaluation: LLM-judged relevance/quality plus three diversity
//! metrics over the M generations of one proposition. For all three
//! diversity scores, lower means more diverse.

pub mod bleu;
mod judge;
mod perspective;

pub use bleu::{self_bleu, self_bleu_per_output, tokenize};
pub use judge::{judge, Aspect};
pub use perspective::{
    extract_opinion_points, perspective_diversity, OpinionPointSet, PerspectiveArgument,
    PerspectiveBreakdown,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, EmbedRequest};
use crate::context::EvalContext;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("need at least 2 outputs, got {0}")]
    TooFewOutputs(usize),
    #[error("output text empty")]
    EmptyText,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-magnitude embedding vector")]
    ZeroVector,
    #[error("no argument yielded opinion points")]
    NoOpinionPoints,
    #[error("opinion points from at least two arguments are required")]
    NoComparablePoints,
    #[error("judge score unusable: {0}")]
    JudgeScore(String),
}

/// Mean over values summed in sorted order, so the result is bit-identical
/// under any permutation of the input.
pub(crate) fn mean_sorted(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Cosine similarity in [-1, 1]. Bit-equal inputs short-circuit to exactly
/// 1.0, which keeps identical texts at similarity 1 regardless of rounding.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch(a.len(), b.len()));
    }
    let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Pairwise embedding similarities: the aggregate mean and, per output, the
/// mean similarity to the other outputs. Both on a 0..100-like scale
/// (cosine x 100, so negatives are possible).
pub fn self_emb_details(
    outputs: &[String],
    ctx: &EvalContext,
) -> Result<(f64, Vec<f64>), MetricsError> {
    if outputs.len() < 2 {
        return Err(MetricsError::TooFewOutputs(outputs.len()));
    }
    if outputs.iter().any(|o| o.trim().is_empty()) {
        return Err(MetricsError::EmptyText);
    }

    let vectors = ctx.backend.embed(&EmbedRequest {
        texts: outputs.to_vec(),
        model_id: ctx.embedding_model_id.clone(),
    })?;

    let n = outputs.len();
    let mut pair_sims = Vec::with_capacity(n * (n - 1) / 2);
    let mut per_output: Vec<Vec<f64>> = vec![Vec::with_capacity(n - 1); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = cosine_similarity(&vectors[i].values, &vectors[j].values)?;
            pair_sims.push(sim);
            per_output[i].push(sim);
            per_output[j].push(sim);
        }
    }

    let aggregate = mean_sorted(&pair_sims) * 100.0;
    let per_output = per_output.iter().map(|sims| mean_sorted(sims) * 100.0).collect();
    Ok((aggregate, per_output))
}

/// Mean pairwise embedding cosine similarity over all unordered pairs,
/// x 100.
pub fn self_emb(outputs: &[String], ctx: &EvalContext) -> Result<f64, MetricsError> {
    Ok(self_emb_details(outputs, ctx)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityBreakdowns {
    pub self_bleu_per_argument: Vec<f64>,
    pub self_emb_per_argument: Vec<f64>,
    pub perspective: PerspectiveBreakdown,
}

/// All three diversity scores for one proposition's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub self_bleu: f64,
    pub self_emb: f64,
    pub perspective: f64,
    pub breakdowns: DiversityBreakdowns,
}

pub fn diversity_report(outputs: &[String], ctx: &EvalContext) -> Result<DiversityReport, MetricsError> {
    let bleu_scores = self_bleu_per_output(outputs)?;
    let self_bleu = mean_sorted(&bleu_scores) * 100.0;
    let (self_emb, emb_per_argument) = self_emb_details(outputs, ctx)?;
    let perspective = perspective_diversity(outputs, ctx)?;

    Ok(DiversityReport {
        self_bleu,
        self_emb,
        perspective: perspective.aggregate,
        breakdowns: DiversityBreakdowns {
            self_bleu_per_argument: bleu_scores.iter().map(|s| s * 100.0).collect(),
            self_emb_per_argument: emb_per_argument,
            perspective,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::prompts::PromptSet;

    fn eval_ctx<'a>(backend: &'a ScriptedBackend, prompts: &'a PromptSet) -> EvalContext<'a> {
        EvalContext::new(backend, prompts, "judge-model", "embed-model")
    }

    #[test]
    fn cosine_of_identical_vectors_is_exactly_one() {
        let v = vec![0.3, -0.2, 0.7, 0.1];
        assert_eq!(cosine_similarity(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let v = vec![0.3, -0.2, 0.7, 0.1];
        let w = vec![0.5, 0.5, -0.1, 0.2];
        let base = cosine_similarity(&v, &w).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let sim = cosine_similarity(&scaled, &w).unwrap();
            assert!((sim - base).abs() < 1e-12, "alpha={alpha}: {sim} vs {base}");
        }
    }

    #[test]
    fn cosine_rejects_mismatched_dimensions() {
        let err = cosine_similarity(&[1.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, MetricsError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        let err = cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, MetricsError::ZeroVector));
    }

    #[test]
    fn self_emb_matches_hand_computation() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new()
            .map_embedding("first essay", vec![1.0, 0.0])
            .map_embedding("second essay", vec![0.0, 1.0])
            .map_embedding("third essay", vec![1.0, 0.0]);
        let outputs = vec![
            "first essay".to_string(),
            "second essay".to_string(),
            "third essay".to_string(),
        ];
        // pair sims: (1,2)=0, (1,3)=1, (2,3)=0 so the mean is 1/3
        let score = self_emb(&outputs, &eval_ctx(&backend, &prompts)).unwrap();
        assert!((score - 100.0 / 3.0).abs() < 1e-9, "{score}");
    }

    #[test]
    fn self_emb_of_identical_embeddings_is_100() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        // Same text everywhere maps to the same default-rule vector.
        let outputs = vec!["same".to_string(), "same".to_string(), "same".to_string()];
        assert_eq!(self_emb(&outputs, &eval_ctx(&backend, &prompts)).unwrap(), 100.0);
    }

    #[test]
    fn self_emb_is_permutation_invariant() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new();
        let outputs: Vec<String> =
            ["alpha beta", "gamma delta", "epsilon zeta", "eta theta"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        let base = self_emb(&outputs, &eval_ctx(&backend, &prompts)).unwrap();
        let mut permuted = outputs.clone();
        permuted.rotate_left(2);
        assert_eq!(self_emb(&permuted, &eval_ctx(&backend, &prompts)).unwrap(), base);
    }

    #[test]
    fn diversity_report_carries_breakdowns() {
        let prompts = PromptSet::builtin();
        let backend = ScriptedBackend::new()
            .add_rule("essay one text", "- point one")
            .add_rule("essay two text", "- point two");
        let outputs = vec!["essay one text".to_string(), "essay two text".to_string()];
        let report = diversity_report(&outputs, &eval_ctx(&backend, &prompts)).unwrap();
        assert_eq!(report.breakdowns.self_bleu_per_argument.len(), 2);
        assert_eq!(report.breakdowns.self_emb_per_argument.len(), 2);
        assert_eq!(report.breakdowns.perspective.per_argument.len(), 2);
        assert!(report.self_bleu >= 0.0 && report.self_bleu <= 100.0);
    }
}
