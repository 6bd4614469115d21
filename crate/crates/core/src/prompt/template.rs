//! Informal prompt templates.
//!
//! A template file is plain text. Blank lines and lines starting with `#` are
//! ignored; the first remaining line is the per-slice sentence. Slots are
//! written `{name}` with `name` one of:
//!
//! | slot           | value                                        |
//! |----------------|----------------------------------------------|
//! | `{slice}`      | 1-based slice id                             |
//! | `{kind}`       | `embb`, `mmtc` or `urllc`                    |
//! | `{qos}`        | normalized QoS level, two decimals           |
//! | `{throughput}` | mean UE throughput in Mb/s, two decimals     |
//! | `{users}`      | number of UEs in the slice                   |
//!
//! The rendered prompt is one sentence per slice, in slice order, joined by
//! single spaces.

use crate::env::{Observation, SliceKind};

use super::PromptError;

pub const DEFAULT_TEMPLATE: &str =
    "Slice {slice} has a QoS level of {qos} and a throughput of {throughput} Mbps.";

pub const SLOTS: [&str; 5] = ["slice", "kind", "qos", "throughput", "users"];

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template parses")
    }
}

impl PromptTemplate {
    pub fn parse(sentence: &str) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut rest = sentence;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| PromptError::Template(format!("unclosed slot in {sentence:?}")))?
                + open;
            let name = &rest[open + 1..close];
            let slot = SLOTS
                .iter()
                .find(|s| **s == name)
                .ok_or_else(|| PromptError::Template(format!("unknown slot {{{name}}}")))?;
            pieces.push(Piece::Slot(slot));
            rest = &rest[close + 1..];
        }
        if rest.contains('}') {
            return Err(PromptError::Template(format!("stray '}}' in {sentence:?}")));
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self {
            source: sentence.to_string(),
            pieces,
        })
    }

    /// Parse a template file body.
    pub fn from_file_contents(contents: &str) -> Result<Self, PromptError> {
        let line = contents
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| PromptError::Template("template file has no sentence".into()))?;
        Self::parse(line)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Literal text of the template, slots removed.
    pub fn literal_text(&self) -> String {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Text(t) => Some(t.as_str()),
                Piece::Slot(_) => None,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Render one sentence per slice. `kinds` may be empty when the
    /// template has no `{kind}` slot.
    pub fn render(&self, obs: &Observation, kinds: &[SliceKind]) -> String {
        (0..obs.num_slices())
            .map(|l| self.render_slice(obs, kinds, l))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn render_slice(&self, obs: &Observation, kinds: &[SliceKind], l: usize) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot("slice") => out.push_str(&(l + 1).to_string()),
                Piece::Slot("kind") => {
                    out.push_str(kinds.get(l).map_or("slice", |k| k.as_str()))
                }
                Piece::Slot("qos") => out.push_str(&format!("{:.2}", obs.qos_level[l])),
                Piece::Slot("throughput") => {
                    out.push_str(&format!("{:.2}", obs.throughput_mbps[l]))
                }
                Piece::Slot("users") => out.push_str(&obs.users[l].to_string()),
                Piece::Slot(other) => unreachable!("slot {other} validated at parse time"),
            }
        }
        out
    }
}
