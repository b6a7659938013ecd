//! debate-forge: persona-driven multi-agent debate for counterargumentative
//! essay generation, plus its automatic evaluation suite.
//!
//! The pipeline assigns personas to a team of agents, runs a critic-checked
//! debate to develop an argument plan, and writes the final essay from that
//! plan. Three baseline pipelines (direct, plan-then-write, and a
//! persona-free planner/critic debate) share the same machinery. Evaluation
//! covers LLM-judged relevance/quality and three diversity metrics:
//! self-BLEU, self-Emb, and perspective diversity over extracted opinion
//! points.
//!
//! Everything runs against any OpenAI-compatible endpoint or fully offline
//! through [`backend::ScriptedBackend`].

pub mod backend;
pub mod context;
pub mod debate;
pub mod metrics;
pub mod persona;
pub mod pipelines;
pub mod prompts;
pub mod store;
pub mod types;

pub use context::{EvalContext, GenerationContext};
