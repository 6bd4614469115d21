//! Precomputed prompt embeddings from an external model.
//!
//! File layout (UTF-8 text):
//!
//! ```text
//! PAMRL-EMB v1 d_model=64
//! <sha256 hex of prompt text> <f64> <f64> ... (d_model values)
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. A completely empty
//! file is an empty table.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::EncoderError;

pub const EMBEDDING_HEADER: &str = "PAMRL-EMB v1";

pub fn prompt_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Default)]
pub struct ExternalEmbeddings {
    d_model: usize,
    table: HashMap<String, Vec<f64>>,
    misses: AtomicU64,
}

impl Clone for ExternalEmbeddings {
    fn clone(&self) -> Self {
        Self {
            d_model: self.d_model,
            table: self.table.clone(),
            misses: AtomicU64::new(self.misses()),
        }
    }
}

impl ExternalEmbeddings {
    pub fn parse(contents: &str, d_model: usize) -> Result<Self, EncoderError> {
        let bad = |line: usize, m: String| EncoderError::Embeddings(format!("line {line}: {m}"));
        let mut lines = contents
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut out = Self {
            d_model,
            ..Self::default()
        };
        let Some((n, header)) = lines.next() else {
            return Ok(out);
        };
        let declared = header
            .strip_prefix(EMBEDDING_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("d_model="))
            .ok_or_else(|| bad(n, format!("expected header '{EMBEDDING_HEADER} d_model=N'")))?
            .parse::<usize>()
            .map_err(|e| bad(n, format!("d_model: {e}")))?;
        if declared != d_model {
            return Err(EncoderError::DimensionMismatch {
                expected: d_model,
                got: declared,
            });
        }
        for (n, line) in lines {
            let mut fields = line.split_whitespace();
            let hash = fields.next().unwrap_or_default();
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad(n, format!("invalid prompt hash {hash:?}")));
            }
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(n, format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != d_model {
                return Err(EncoderError::DimensionMismatch {
                    expected: d_model,
                    got: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(n, "non-finite value".into()));
            }
            out.table.insert(hash.to_ascii_lowercase(), values);
        }
        Ok(out)
    }

    pub fn load(path: &Path, d_model: usize) -> Result<Self, EncoderError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| EncoderError::Embeddings(format!("{}: {e}", path.display())))?;
        Self::parse(&s, d_model)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Lookup by prompt text. The first miss is logged as a warning.
    pub fn get(&self, text: &str) -> Option<&[f64]> {
        let hit = self.table.get(&prompt_hash(text)).map(Vec::as_slice);
        if hit.is_none() && !self.table.is_empty() {
            let prior = self.misses.fetch_add(1, Ordering::Relaxed);
            if prior == 0 {
                log::warn!("prompt missing from external embeddings, using the built-in encoder");
            } else {
                log::debug!("external embedding miss #{}", prior + 1);
            }
        }
        hit
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}
