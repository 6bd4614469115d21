use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::nn::{params_fingerprint, Graph, Linear, Param, Tensor, Var};
use crate::prompt::{assemble_sequence, ContextTokens};
use crate::rng::{self, label};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    /// Seed of the frozen weights; independent of the run seed so that all
    /// runs share one encoder unless asked otherwise.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            blocks: 2,
            ff_dim: 128,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    wq: Param,
    wk: Param,
    wv: Param,
    wo: Param,
    ff1: Linear,
    ff2: Linear,
}

impl Block {
    fn new(i: usize, d: usize, ff: usize, r: &mut impl rand::Rng) -> Self {
        let mut proj = |name: &str| Linear::new(&format!("encoder.{i}.{name}"), d, d, false, r).weight;
        let (wq, wk, wv, wo) = (proj("q"), proj("k"), proj("v"), proj("o"));
        Self {
            wq,
            wk,
            wv,
            wo,
            ff1: Linear::new(&format!("encoder.{i}.ff1"), d, ff, false, r),
            ff2: Linear::new(&format!("encoder.{i}.ff2"), ff, d, false, r),
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ff1.weight,
            &self.ff1.bias,
            &self.ff2.weight,
            &self.ff2.bias,
        ]
    }

    /// Post-norm block: single-head self-attention, then a tanh feed-forward.
    fn forward(&self, g: &mut Graph, x: Var, d: usize) -> Var {
        let (wq, wk, wv, wo) = (
            g.param(&self.wq),
            g.param(&self.wk),
            g.param(&self.wv),
            g.param(&self.wo),
        );
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let scores = g.matmul_nt(q, k);
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = g.softmax_rows(scores);
        let mixed = g.matmul(attn, v);
        let o = g.matmul(mixed, wo);
        let x1 = g.add(x, o);
        let x1 = g.layer_norm_rows(x1, LN_EPS);
        let f = self.ff1.forward(g, x1, false);
        let f = g.tanh(f);
        let f = self.ff2.forward(g, f, false);
        let x2 = g.add(x1, f);
        g.layer_norm_rows(x2, LN_EPS)
    }
}

/// Sinusoidal position table, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, d], data).expect("shape matches")
}

/// Small frozen transformer standing in for a pretrained language model.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    config: EncoderConfig,
    embed: Param,
    blocks: Vec<Block>,
}

impl FrozenEncoder {
    pub fn new(config: EncoderConfig, vocab_size: usize) -> Result<Self, EncoderError> {
        if config.d_model == 0 || config.ff_dim == 0 || vocab_size == 0 {
            return Err(EncoderError::InvalidConfig(
                "encoder d_model, ff_dim and vocabulary size must be positive".into(),
            ));
        }
        let d = config.d_model;
        let mut r = rng::stream(config.seed, &[label::ENCODER]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let table = (0..vocab_size * d).map(|_| normal.sample(&mut r)).collect();
        let embed = Param::new(
            "encoder.embed",
            Tensor::new(vec![vocab_size, d], table).expect("shape matches"),
            false,
        );
        let blocks = (0..config.blocks)
            .map(|i| Block::new(i, d, config.ff_dim, &mut r))
            .collect();
        Ok(Self {
            config,
            embed,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn embed_table(&self) -> &Tensor {
        &self.embed.value
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.embed)
            .chain(self.blocks.iter().flat_map(Block::params))
            .collect()
    }

    /// SHA-256 over every frozen weight.
    pub fn fingerprint(&self) -> String {
        params_fingerprint(self.params())
    }

    /// `h = mean over rows of blocks(seq + positions)`, shape `[1, d_model]`.
    pub fn encode(&self, g: &mut Graph, seq: Var) -> Result<Var, EncoderError> {
        let shape = g.value(seq).shape().to_vec();
        let d = self.config.d_model;
        if shape[0] == 0 {
            return Err(EncoderError::EmptySequence);
        }
        if shape[1] != d {
            return Err(EncoderError::DimensionMismatch {
                expected: d,
                got: shape[1],
            });
        }
        let pos = g.constant(positional_encoding(shape[0], d));
        let mut x = g.add(seq, pos);
        for b in &self.blocks {
            x = b.forward(g, x, d);
        }
        Ok(g.mean_rows(x))
    }

    /// Assemble `ctx ++ ids` and encode in one graph.
    pub fn encode_ids(
        &self,
        g: &mut Graph,
        ids: &[u32],
        ctx: &ContextTokens,
    ) -> Result<Var, EncoderError> {
        let seq = assemble_sequence(g, ids, ctx, &self.embed.value)?;
        self.encode(g, seq)
    }

    /// Gradient-free encoding.
    pub fn encode_plain(&self, ids: &[u32], ctx: &ContextTokens) -> Result<Vec<f64>, EncoderError> {
        let mut frozen = ctx.clone();
        frozen.param.set_trainable(false);
        let mut g = Graph::new();
        let h = self.encode_ids(&mut g, ids, &frozen)?;
        Ok(g.value(h).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FrozenEncoder {
        FrozenEncoder::new(
            EncoderConfig {
                d_model: 16,
                blocks: 2,
                ff_dim: 32,
                seed: 3,
            },
            20,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_encoding() {
        let a = small();
        let b = small();
        let ctx = ContextTokens::new(2, 16, 1);
        let ids = [1, 5, 7, 2];
        assert_eq!(a.encode_plain(&ids, &ctx).unwrap(), b.encode_plain(&ids, &ctx).unwrap());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn token_order_matters() {
        let e = small();
        let ctx = ContextTokens::new(0, 16, 1);
        let h1 = e.encode_plain(&[1, 5, 7, 2], &ctx).unwrap();
        let h2 = e.encode_plain(&[5, 1, 7, 2], &ctx).unwrap();
        let diff: f64 = h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn empty_sequence_is_error() {
        let e = small();
        let ctx = ContextTokens::new(0, 16, 1);
        assert!(matches!(e.encode_plain(&[], &ctx), Err(EncoderError::EmptySequence)));
    }

    #[test]
    fn grads_reach_context_only() {
        let e = small();
        let ctx = ContextTokens::new(3, 16, 1);
        let mut g = Graph::new();
        let h = e.encode_ids(&mut g, &[1, 2, 3], &ctx).unwrap();
        let w = g.constant(Tensor::row((0..16).map(|i| (i as f64 * 0.37).sin()).collect()));
        let y = g.mul(h, w);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        let gc = grads.param(&ctx.param).expect("context gradient");
        assert!(gc.data().iter().any(|v| v.abs() > 0.0));
        for p in e.params() {
            assert!(grads.param(p).is_none());
        }
    }

    #[test]
    fn context_perturbation_changes_output() {
        let e = small();
        let mut ctx = ContextTokens::new(2, 16, 1);
        let ids = [4, 4, 9];
        let before = e.encode_plain(&ids, &ctx).unwrap();
        ctx.param.value.data_mut()[5] += 0.1;
        let after = e.encode_plain(&ids, &ctx).unwrap();
        assert_ne!(before, after);
    }
}
