//! Self-BLEU: mean BLEU-4 of each output against the others.
//!
//! BLEU configuration: uniform weights over n = 1..4, multi-reference
//! clipped counts, brevity penalty against the closest reference length
//! (ties toward the shorter), and epsilon smoothing (1e-9) for zero
//! n-gram matches. Scores are reported on a 0..100 scale; lower means
//! more lexically diverse.

use std::collections::HashMap;

use super::{mean_sorted, MetricsError};

const MAX_ORDER: usize = 4;
const SMOOTHING_EPS: f64 = 1e-9;

/// Lowercases, separates punctuation into its own tokens, then splits on
/// Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut spaced = String::with_capacity(lower.len() + 16);
    for c in lower.chars() {
        if c.is_alphanumeric() || c.is_whitespace() {
            spaced.push(c);
        } else {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 of one hypothesis against multiple references, in [0, 1].
pub fn bleu(hypothesis: &[String], references: &[&Vec<String>]) -> f64 {
    let hyp_len = hypothesis.len();
    if hyp_len == 0 || references.is_empty() {
        return 0.0;
    }

    let ref_len = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| ((*len as i64 - hyp_len as i64).abs(), *len))
        .unwrap();

    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let total = hyp_len.saturating_sub(n - 1);
        let precision = if total == 0 {
            SMOOTHING_EPS
        } else {
            let hyp_counts = ngram_counts(hypothesis, n);
            let ref_counts: Vec<HashMap<&[String], u64>> =
                references.iter().map(|r| ngram_counts(r, n)).collect();
            let mut matches = 0u64;
            for (gram, count) in &hyp_counts {
                let clip = ref_counts
                    .iter()
                    .map(|rc| *rc.get(gram).unwrap_or(&0))
                    .max()
                    .unwrap_or(0);
                matches += (*count).min(clip);
            }
            if matches == 0 {
                SMOOTHING_EPS / total as f64
            } else {
                matches as f64 / total as f64
            }
        };
        log_sum += precision.ln() / MAX_ORDER as f64;
    }

    let brevity_penalty = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    brevity_penalty * log_sum.exp()
}

/// BLEU of each output against the other outputs, in [0, 1].
pub fn self_bleu_per_output(outputs: &[String]) -> Result<Vec<f64>, MetricsError> {
    if outputs.len() < 2 {
        return Err(MetricsError::TooFewOutputs(outputs.len()));
    }
    if outputs.iter().any(|o| o.trim().is_empty()) {
        return Err(MetricsError::EmptyText);
    }

    let token_lists: Vec<Vec<String>> = outputs.iter().map(|o| tokenize(o)).collect();
    Ok((0..token_lists.len())
        .map(|m| {
            let references: Vec<&Vec<String>> = token_lists
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != m)
                .map(|(_, tokens)| tokens)
                .collect();
            bleu(&token_lists[m], &references)
        })
        .collect())
}

/// Mean self-BLEU over all outputs, on a 0..100 scale.
pub fn self_bleu(outputs: &[String]) -> Result<f64, MetricsError> {
    Ok(mean_sorted(&self_bleu_per_output(outputs)?) * 100.0)
}
