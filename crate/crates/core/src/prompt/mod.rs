//! Informal prompts: rendering observations as text, tokenizing, and
//! assembling the encoder input with the learnable context tokens.

mod context;
mod template;
mod vocab;

pub use context::{assemble_sequence, ContextTokens, CONTEXT_INIT_STD};
pub use template::{PromptTemplate, DEFAULT_TEMPLATE, SLOTS};
pub use vocab::{split_tokens, TokenVocab, UNKNOWN, UNKNOWN_ID};

use crate::env::{Observation, SliceKind};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template: {0}")]
    Template(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("d_model mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Render the prompt for one observation.
pub fn render_prompt(obs: &Observation, template: &PromptTemplate, kinds: &[SliceKind]) -> String {
    template.render(obs, kinds)
}
