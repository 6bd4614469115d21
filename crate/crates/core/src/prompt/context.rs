use rand_distr::{Distribution, Normal};

use super::PromptError;
use crate::nn::{Graph, Param, Tensor, Var};
use crate::rng::{self, label};

pub const CONTEXT_INIT_STD: f64 = 0.02;

/// Learnable context tokens prepended to every prompt.
#[derive(Clone, Debug)]
pub struct ContextTokens {
    pub param: Param,
}

impl ContextTokens {
    pub fn new(n_ctx: usize, d_model: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[label::CONTEXT]);
        let normal = Normal::new(0.0, CONTEXT_INIT_STD).expect("valid std");
        let data = (0..n_ctx * d_model).map(|_| normal.sample(&mut r)).collect();
        Self {
            param: Param::new(
                "prompt.context",
                Tensor::new(vec![n_ctx, d_model], data).expect("shape matches"),
                true,
            ),
        }
    }

    pub fn n_ctx(&self) -> usize {
        self.param.value.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.param.value.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.param.value
    }
}

/// Encoder input: context rows followed by one embedding row per token.
///
/// Context rows are bound as a parameter (tracked while trainable); the
/// embedding table always enters as a constant.
pub fn assemble_sequence(
    g: &mut Graph,
    ids: &[u32],
    ctx: &ContextTokens,
    embed_table: &Tensor,
) -> Result<Var, PromptError> {
    let d = embed_table.cols();
    if ctx.d_model() != d {
        return Err(PromptError::DimensionMismatch {
            expected: d,
            got: ctx.d_model(),
        });
    }
    let vocab = embed_table.rows();
    let mut tokens = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let id = id as usize;
        if id >= vocab {
            return Err(PromptError::Vocab(format!(
                "token id {id} outside embedding table of {vocab} rows"
            )));
        }
        tokens.extend_from_slice(embed_table.row_slice(id));
    }
    let tok = Tensor::new(vec![ids.len(), d], tokens).expect("shape matches");
    match (ctx.n_ctx(), ids.len()) {
        (0, _) => Ok(g.constant(tok)),
        (_, 0) => Ok(g.param(&ctx.param)),
        _ => {
            let c = g.param(&ctx.param);
            let t = g.constant(tok);
            Ok(g.concat_rows(&[c, t]))
        }
    }
}
