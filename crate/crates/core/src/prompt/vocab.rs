use std::collections::{BTreeSet, HashMap};

use super::{PromptError, PromptTemplate};

pub const UNKNOWN: &str = "<unk>";
pub const UNKNOWN_ID: u32 = 0;
const PUNCTUATION: &str = ".,;:!?()-+%/";
const DIGITS: &str = "0123456789";

/// Split text into lowercase tokens: alphabetic runs form words, every digit
/// and punctuation mark is its own token, whitespace separates.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() || ch == '_' || ch == '<' || ch == '>' {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Closed vocabulary over template words, slice kinds, digits and punctuation.
/// Id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TokenVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PromptError> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN) {
            return Err(PromptError::Vocab(format!("first token must be {UNKNOWN}")));
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(PromptError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn build(templates: &[&PromptTemplate]) -> Self {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for t in templates {
            set.extend(split_tokens(&t.literal_text()));
        }
        for k in ["slice", "embb", "mmtc", "urllc"] {
            set.insert(k.to_string());
        }
        set.extend(DIGITS.chars().chain(PUNCTUATION.chars()).map(String::from));
        set.remove(UNKNOWN);
        let tokens = std::iter::once(UNKNOWN.to_string()).chain(set).collect();
        Self::from_tokens(tokens).expect("unique by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNKNOWN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, line `i` holding id `i`.
    pub fn to_file_contents(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_contents(contents: &str) -> Result<Self, PromptError> {
        Self::from_tokens(contents.lines().map(str::to_string).collect())
    }
}
