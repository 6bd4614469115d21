//! State representation: frozen text encoder, context tokens and the two
//! adapters that fuse text and numeric state.

mod adapters;
mod external;
mod transformer;

pub use adapters::{
    alignment_loss, fuse, pretrain_adapters, AdapterConfig, AdapterNet, AdapterRole, FusedState,
    PretrainReport,
};
pub use external::{prompt_hash, ExternalEmbeddings, EMBEDDING_HEADER};
pub use transformer::{positional_encoding, EncoderConfig, FrozenEncoder};

use std::collections::HashMap;

use crate::env::{Observation, SliceKind};
use crate::nn::{Graph, NnError, Param, Var};
use crate::prompt::{ContextTokens, PromptError, PromptTemplate, TokenVocab};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("empty input sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {need} state/embedding pairs, have {have}")]
    NotEnoughPairs { have: usize, need: usize },
    #[error("adapters used before offline pretraining")]
    NotPretrained,
    #[error("external embeddings: {0}")]
    Embeddings(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Everything between an [`Observation`] and the fused actor/critic input.
#[derive(Clone, Debug)]
pub struct Srm {
    pub template: PromptTemplate,
    pub kinds: Vec<SliceKind>,
    pub vocab: TokenVocab,
    pub encoder: FrozenEncoder,
    pub context: ContextTokens,
    pub numeric: AdapterNet,
    pub text: AdapterNet,
    pub external: Option<ExternalEmbeddings>,
    /// Feed a fixed prompt regardless of the observation.
    pub static_text: bool,
    pretrained: bool,
}

/// Prompt text to `(h, external_hit)`.
pub type EmbedCache = HashMap<String, (Vec<f64>, bool)>;

/// Output of [`Srm::represent`].
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub fused: FusedState,
    pub prompt_ids: Vec<u32>,
    /// `h` came from the external table rather than the encoder.
    pub external_hit: bool,
}

pub struct SrmSpec<'a> {
    pub template: PromptTemplate,
    pub kinds: Vec<SliceKind>,
    pub encoder: &'a EncoderConfig,
    pub adapter: &'a AdapterConfig,
    pub n_ctx: usize,
    pub feature_dim: usize,
    pub static_text: bool,
    pub seed: u64,
}

impl Srm {
    pub fn new(spec: SrmSpec<'_>) -> Result<Self, EncoderError> {
        let vocab = TokenVocab::build(&[&spec.template]);
        let encoder = FrozenEncoder::new(spec.encoder.clone(), vocab.len())?;
        let d = encoder.d_model();
        Ok(Self {
            context: ContextTokens::new(spec.n_ctx, d, spec.seed),
            numeric: AdapterNet::new(AdapterRole::Numeric, spec.feature_dim, spec.adapter, spec.seed)?,
            text: AdapterNet::new(AdapterRole::Text, d, spec.adapter, spec.seed)?,
            template: spec.template,
            kinds: spec.kinds,
            vocab,
            encoder,
            external: None,
            static_text: spec.static_text,
            pretrained: false,
        })
    }

    pub fn fused_dim(&self) -> usize {
        self.numeric.output_dim() + self.text.output_dim()
    }

    pub fn n_ctx(&self) -> usize {
        self.context.n_ctx()
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    /// Prompt text for `obs`; with `static_text` the observation is ignored.
    pub fn prompt(&self, obs: &Observation) -> String {
        if self.static_text {
            let l = obs.num_slices();
            let blank = Observation {
                qos: vec![0.0; l],
                qos_level: vec![0.0; l],
                throughput_mbps: vec![0.0; l],
                users: vec![0; l],
                prev_action: Vec::new(),
            };
            return self.template.render(&blank, &self.kinds);
        }
        self.template.render(obs, &self.kinds)
    }

    /// `h` for a prompt, preferring the external table.
    pub fn embed(&self, text: &str, ids: &[u32]) -> Result<(Vec<f64>, bool), EncoderError> {
        if let Some(v) = self.external.as_ref().and_then(|e| e.get(text)) {
            return Ok((v.to_vec(), true));
        }
        Ok((self.encoder.encode_plain(ids, &self.context)?, false))
    }

    /// Raw `(features, h)` pair used for offline alignment.
    pub fn alignment_pair(&self, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>), EncoderError> {
        let text = self.prompt(obs);
        let ids = self.vocab.tokenize(&text);
        Ok((obs.features(), self.embed(&text, &ids)?.0))
    }

    pub fn pretrain(
        &mut self,
        pairs: &[(Vec<f64>, Vec<f64>)],
        cfg: &AdapterConfig,
        seed: u64,
    ) -> Result<PretrainReport, EncoderError> {
        let report = pretrain_adapters(&mut self.numeric, &mut self.text, pairs, cfg, seed)?;
        self.pretrained = true;
        Ok(report)
    }

    /// Mark adapters as pretrained (e.g. after loading them from a checkpoint).
    pub fn mark_pretrained(&mut self) {
        self.numeric.mlp.set_trainable(false);
        self.text.mlp.set_trainable(false);
        self.pretrained = true;
    }

    pub fn represent(&self, obs: &Observation) -> Result<Representation, EncoderError> {
        self.represent_cached(obs, &mut EmbedCache::new())
    }

    /// [`Srm::represent`] reusing `h` for prompts already in `cache`. The
    /// cache must be cleared whenever the context tokens change.
    pub fn represent_cached(
        &self,
        obs: &Observation,
        cache: &mut EmbedCache,
    ) -> Result<Representation, EncoderError> {
        let text = self.prompt(obs);
        let ids = self.vocab.tokenize(&text);
        let (h, external_hit) = match cache.get(&text) {
            Some(hit) => hit.clone(),
            None => {
                let e = self.embed(&text, &ids)?;
                cache.insert(text, e.clone());
                e
            }
        };
        let fused = fuse(&self.numeric, &self.text, &obs.features(), &h)?;
        if !fused.is_finite() {
            return Err(EncoderError::NonFinite("fused state".into()));
        }
        Ok(Representation {
            fused,
            prompt_ids: ids,
            external_hit,
        })
    }

    /// Whether the text branch depends on trainable context tokens.
    pub fn context_is_live(&self) -> bool {
        self.n_ctx() > 0 && self.context.param.trainable()
    }

    /// `F_c2(encode(ctx ++ ids))` as a `[1, d_f]` node with the context
    /// tokens tracked and everything else frozen.
    pub fn text_branch(&self, g: &mut Graph, ids: &[u32]) -> Result<Var, EncoderError> {
        let h = self.encoder.encode_ids(g, ids, &self.context)?;
        Ok(self.text.mlp.forward_frozen(g, h))
    }

    /// Adapters and context tokens, the parameters saved with a run.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.context.param];
        v.extend(self.numeric.params());
        v.extend(self.text.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.context.param];
        v.extend(self.numeric.mlp.params_mut());
        v.extend(self.text.mlp.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Tensor};

    fn srm(n_ctx: usize) -> Srm {
        Srm::new(SrmSpec {
            template: PromptTemplate::default(),
            kinds: vec![SliceKind::Embb, SliceKind::Urllc],
            encoder: &EncoderConfig {
                d_model: 8,
                blocks: 2,
                ff_dim: 16,
                seed: 1,
            },
            adapter: &AdapterConfig {
                fused_dim: 4,
                hidden: 6,
                ..AdapterConfig::default()
            },
            n_ctx,
            feature_dim: 5,
            static_text: false,
            seed: 3,
        })
        .unwrap()
    }

    fn obs(q0: f64) -> Observation {
        Observation {
            qos: vec![q0, 1.0],
            qos_level: vec![q0, 1.0],
            throughput_mbps: vec![3.0, 4.0],
            users: vec![1, 2],
            prev_action: vec![1.0],
        }
    }

    #[test]
    fn numeric_change_below_print_precision_leaves_text_half() {
        let s = srm(2);
        let a = s.represent(&obs(0.801)).unwrap();
        let b = s.represent(&obs(0.802)).unwrap();
        assert_eq!(a.fused.text, b.fused.text);
        assert_ne!(a.fused.numeric, b.fused.numeric);
        assert_eq!(a.fused.len(), 8);
    }

    #[test]
    fn static_text_ignores_observation() {
        let mut s = srm(0);
        s.static_text = true;
        assert_eq!(s.prompt(&obs(0.1)), s.prompt(&obs(3.0)));
    }

    #[test]
    fn text_branch_matches_plain_path() {
        let s = srm(3);
        let o = obs(0.5);
        let r = s.represent(&o).unwrap();
        let mut g = Graph::new();
        let v = s.text_branch(&mut g, &r.prompt_ids).unwrap();
        for (x, y) in g.value(v).data().iter().zip(&r.fused.text) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn context_gradient_through_encoder_matches_finite_differences() {
        let s = srm(2);
        let ids = s.vocab.tokenize(&s.prompt(&obs(0.7)));
        let weights: Vec<f64> = (0..4).map(|i| 0.3 + i as f64).collect();
        let loss_of = |srm: &Srm| -> (f64, Option<Tensor>) {
            let mut g = Graph::new();
            let t = srm.text_branch(&mut g, &ids).unwrap();
            let w = g.constant(Tensor::row(weights.clone()));
            let y = g.mul(t, w);
            let y = g.tanh(y);
            let l = g.sum(y);
            let val = g.value(l).item();
            let grads = g.backward(l).unwrap();
            (val, grads.param(&srm.context.param).cloned())
        };
        let (_, analytic) = loss_of(&s);
        assert!(analytic.as_ref().unwrap().data().iter().any(|v| *v != 0.0));
        let mut f = |x: &Tensor| {
            let mut probe = s.clone();
            probe.context.param.value = x.clone();
            loss_of(&probe).0
        };
        let err = finite_diff_check(&mut f, s.context.values(), analytic.as_ref(), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
