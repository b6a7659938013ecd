//! Prompt template assets.
//!
//! Templates ship embedded in the binary and can be swapped wholesale with
//! a directory of `<name>.txt` files. Placeholders are literal markers
//! (`##input_proposition`, `###candidate_list`, `{plan}`, ...) replaced by
//! plain substring substitution; each template documents its own markers.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

macro_rules! builtin_templates {
    ($(($name:ident, $file:literal)),* $(,)?) => {
        /// Template names, one per shipped asset.
        pub mod names {
            $(pub const $name: &str = $file;)*
        }

        /// All template names in a stable order.
        pub const TEMPLATE_NAMES: &[&str] = &[$($file),*];

        fn builtin_text(name: &str) -> &'static str {
            match name {
                $($file => include_str!(concat!("../assets/prompts/", $file, ".txt")),)*
                other => panic!("unknown builtin template {other}"),
            }
        }
    };
}

builtin_templates![
    (PERSONA_POOL, "persona_pool"),
    (PERSONA_SELECT, "persona_select"),
    (DEBATE_BACKGROUND, "debate_background"),
    (DEBATE_MAIN_TEAM, "debate_main_team"),
    (DEBATE_CRITIC, "debate_critic"),
    (DEBATE_PLANNER, "debate_planner"),
    (DEBATE_TURN, "debate_turn"),
    (DEBATE_VERDICT, "debate_verdict"),
    (PLAN_SYNTHESIS, "plan_synthesis"),
    (PLAN_DIRECT, "plan_direct"),
    (ESSAY_FROM_PLAN, "essay_from_plan"),
    (ESSAY_DIRECT, "essay_direct"),
    (OPINION_POINTS, "opinion_points"),
    (JUDGE_RELEVANCE, "judge_relevance"),
    (JUDGE_QUALITY, "judge_quality"),
    (NEUTRAL_SYSTEM, "neutral_system"),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt directory {0} is missing template {1}.txt")]
    MissingTemplate(String, String),
    #[error("failed to read template {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

/// A complete set of prompt templates, keyed by name.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl PromptSet {
    /// The embedded default templates.
    pub fn builtin() -> Self {
        let templates = TEMPLATE_NAMES
            .iter()
            .map(|name| (name.to_string(), builtin_text(name).to_string()))
            .collect();
        Self { templates }
    }

    /// Loads the whole set from a directory; every template file must exist.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                return Err(PromptError::MissingTemplate(
                    dir.display().to_string(),
                    name.to_string(),
                ));
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Read {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(name.to_string(), text);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: &str) -> &str {
        self.templates
            .get(name)
            .unwrap_or_else(|| panic!("unknown template {name}"))
    }

    /// Renders a template by replacing each `(marker, value)` pair in order.
    pub fn render(&self, name: &str, substitutions: &[(&str, &str)]) -> String {
        let mut text = self.get(name).to_string();
        for (marker, value) in substitutions {
            text = text.replace(marker, value);
        }
        text
    }

    /// SHA-256 digest of every template, for run manifests.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(name, text)| (name.clone(), hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// English number word for small counts, so rendered prompts read naturally
/// ("a team of three agents"). Falls back to digits.
pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    WORDS
        .get(n)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

/// Display name for the i-th main-team member: "Agent A", "Agent B", ...
pub fn agent_name(index: usize) -> String {
    if index < 26 {
        format!("Agent {}", (b'A' + index as u8) as char)
    } else {
        format!("Agent {}", index + 1)
    }
}

/// "Agent A", "Agent A and Agent B", "Agent A, Agent B, and Agent C", ...
pub fn agent_name_list(count: usize) -> String {
    let names: Vec<String> = (0..count).map(agent_name).collect();
    match names.len() {
        0 => String::new(),
        1 => names[0].clone(),
        2 => format!("{} and {}", names[0], names[1]),
        _ => {
            let head = names[..names.len() - 1].join(", ");
            format!("{}, and {}", head, names[names.len() - 1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_has_every_template() {
        let set = PromptSet::builtin();
        for name in TEMPLATE_NAMES {
            assert!(!set.get(name).is_empty(), "{name} empty");
        }
    }

    #[test]
    fn render_replaces_markers() {
        let set = PromptSet::builtin();
        let text = set.render(
            names::PERSONA_POOL,
            &[
                ("##input_proposition", "We should ban homework"),
                ("##pool_min", "5"),
                ("##pool_max", "10"),
            ],
        );
        assert!(text.contains("Given a proposition: We should ban homework"));
        assert!(text.contains("a pool of 5 to 10 debate agents"));
        assert!(!text.contains("##input_proposition"));
    }

    #[test]
    fn selection_prompt_with_default_team_size_reads_three() {
        let set = PromptSet::builtin();
        let text = set.render(
            names::PERSONA_SELECT,
            &[
                ("##input_proposition", "x"),
                ("###candidate_list", "{}"),
                ("##team_size", &number_word(3)),
            ],
        );
        assert!(text.contains("build a team of three agents"));
        assert!(text.contains("select three candidates"));
    }

    #[test]
    fn digests_are_stable_and_complete() {
        let set = PromptSet::builtin();
        let digests = set.digests();
        assert_eq!(digests.len(), TEMPLATE_NAMES.len());
        assert_eq!(digests, set.digests());
        for digest in digests.values() {
            assert_eq!(digest.len(), 64);
        }
    }

    #[test]
    fn from_dir_requires_the_whole_set() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("persona_pool.txt"), "only one").unwrap();
        let err = PromptSet::from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::MissingTemplate(_, _)));
    }

    #[test]
    fn from_dir_overrides_builtins() {
        let dir = tempfile::tempdir().unwrap();
        for name in TEMPLATE_NAMES {
            std::fs::write(dir.path().join(format!("{name}.txt")), format!("custom {name}"))
                .unwrap();
        }
        let set = PromptSet::from_dir(dir.path()).unwrap();
        assert_eq!(set.get(names::ESSAY_DIRECT), "custom essay_direct");
    }

    #[test]
    fn agent_names_format() {
        assert_eq!(agent_name(0), "Agent A");
        assert_eq!(agent_name(2), "Agent C");
        assert_eq!(agent_name_list(3), "Agent A, Agent B, and Agent C");
        assert_eq!(agent_name_list(2), "Agent A and Agent B");
        assert_eq!(agent_name_list(1), "Agent A");
    }

    #[test]
    fn number_words() {
        assert_eq!(number_word(3), "three");
        assert_eq!(number_word(10), "ten");
        assert_eq!(number_word(42), "42");
    }
}
