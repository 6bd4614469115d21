use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::MarlError;
use crate::encoder::{AdapterConfig, EncoderConfig, PretrainReport, Srm, SrmSpec};
use crate::env::{EnvConfig, Environment, SemanticToyConfig, SemanticToyEnv, SliceEnv, SliceKind};
use crate::nn::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::prompt::PromptTemplate;
use crate::rng::{self, label};
use crate::sac::{Actor, Critic, SacConfig, SacError, StateSource, Transition};

/// Which environment each agent runs.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvSpec {
    Slicing(EnvConfig),
    SemanticToy(SemanticToyConfig),
}

impl EnvSpec {
    /// `N_m`: one agent per DU (or per toy copy).
    pub fn agents(&self) -> usize {
        match self {
            EnvSpec::Slicing(c) => c.cell.num_dus,
            EnvSpec::SemanticToy(c) => c.agents,
        }
    }

    pub fn kinds(&self) -> Vec<SliceKind> {
        match self {
            EnvSpec::Slicing(c) => c.slices.iter().map(|s| s.kind).collect(),
            EnvSpec::SemanticToy(_) => Vec::new(),
        }
    }

    pub fn num_slices(&self) -> usize {
        match self {
            EnvSpec::Slicing(c) => c.slices.len(),
            EnvSpec::SemanticToy(c) => c.num_slices,
        }
    }

    pub fn build(&self, du: usize, seed: u64) -> Result<Box<dyn Environment>, MarlError> {
        Ok(match self {
            EnvSpec::Slicing(c) => Box::new(SliceEnv::new(c.clone(), du)?),
            EnvSpec::SemanticToy(c) => Box::new(SemanticToyEnv::new(
                c.clone(),
                rng::derive(seed, &[du as u64]),
            )?),
        })
    }
}

pub struct PoolConfig<'a> {
    pub env: &'a EnvSpec,
    pub sac: &'a SacConfig,
    pub encoder: &'a EncoderConfig,
    pub adapter: &'a AdapterConfig,
    pub template: PromptTemplate,
    pub n_ctx: usize,
    /// Feed a fixed prompt (the no-prompt ablation).
    pub static_text: bool,
    pub seed: u64,
}

/// All learners and environments of one run.
pub struct AgentPool {
    /// Shared by every actor; the context tokens live here exactly once.
    pub srm: Srm,
    pub actors: Vec<Actor>,
    pub critic: Critic,
    pub envs: Vec<Box<dyn Environment>>,
    /// Separate instances so evaluation never disturbs training episodes.
    pub eval_envs: Vec<Box<dyn Environment>>,
    pub sac: SacConfig,
    pub(crate) actor_opts: Vec<Adam>,
    pub(crate) critic_opt: Adam,
    pub(crate) context_opt: Adam,
    seed: u64,
}

impl AgentPool {
    pub fn new(cfg: PoolConfig<'_>) -> Result<Self, MarlError> {
        cfg.sac.validate()?;
        let n = cfg.env.agents();
        if n == 0 {
            return Err(MarlError::InvalidConfig("at least one agent is required".into()));
        }
        let envs = (0..n)
            .map(|i| cfg.env.build(i, cfg.seed))
            .collect::<Result<Vec<_>, _>>()?;
        let eval_envs = (0..n)
            .map(|i| cfg.env.build(i, cfg.seed))
            .collect::<Result<Vec<_>, _>>()?;
        let action_dim = envs[0].action_dim();
        let srm = Srm::new(SrmSpec {
            template: cfg.template,
            kinds: cfg.env.kinds(),
            encoder: cfg.encoder,
            adapter: cfg.adapter,
            n_ctx: cfg.n_ctx,
            feature_dim: envs[0].feature_dim(),
            static_text: cfg.static_text,
            seed: cfg.seed,
        })?;
        let state_dim = srm.fused_dim();
        let actors = (0..n)
            .map(|i| {
                let mut r = rng::stream(cfg.seed, &[label::ACTOR, i as u64]);
                Actor::new(&format!("actor{i}"), state_dim, action_dim, &cfg.sac.hidden, &mut r)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let critic = Critic::new(
            state_dim,
            action_dim,
            &cfg.sac.hidden,
            cfg.sac.target_critic,
            &mut rng::stream(cfg.seed, &[label::CRITIC]),
        )?;
        Ok(Self {
            actor_opts: (0..n)
                .map(|_| Adam::new(AdamConfig::with_lr(cfg.sac.actor_lr)))
                .collect(),
            critic_opt: Adam::new(AdamConfig::with_lr(cfg.sac.critic_lr)),
            context_opt: Adam::new(AdamConfig::with_lr(cfg.sac.context_lr)),
            srm,
            actors,
            critic,
            envs,
            eval_envs,
            sac: cfg.sac.clone(),
            seed: cfg.seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn action_dim(&self) -> usize {
        self.envs[0].action_dim()
    }

    pub fn num_slices(&self) -> usize {
        self.envs[0].num_slices()
    }

    /// Collect `(features, h)` pairs with uniformly random actions on every
    /// DU, then align and freeze the adapters.
    pub fn pretrain_adapters(&mut self, cfg: &AdapterConfig) -> Result<PretrainReport, MarlError> {
        let mut pairs = Vec::with_capacity(cfg.pretrain_steps * self.envs.len());
        for (i, env) in self.envs.iter_mut().enumerate() {
            let mut r = rng::stream(self.seed, &[label::PRETRAIN, i as u64]);
            let mut obs = env.reset(rng::derive(self.seed, &[label::PRETRAIN, i as u64, 1]));
            for _ in 0..cfg.pretrain_steps {
                pairs.push(self.srm.alignment_pair(&obs)?);
                let a: Vec<f64> = (0..env.action_dim()).map(|_| r.random_range(-1.0..=1.0)).collect();
                obs = env.step(&a)?.observation;
            }
        }
        Ok(self.srm.pretrain(&pairs, cfg, self.seed)?)
    }
}

/// Rebuilds the text half of each state with the current context tokens so
/// the actor loss differentiates through them. Identical prompts in a batch
/// are encoded once.
pub struct ContextStates<'a> {
    pub srm: &'a Srm,
}

impl StateSource for ContextStates<'_> {
    fn states(&self, g: &mut Graph, batch: &[Arc<Transition>]) -> Result<Var, SacError> {
        if batch.is_empty() {
            return Err(SacError::EmptyBatch);
        }
        let live = self.srm.context_is_live();
        let mut unique: HashMap<&[u32], Var> = HashMap::new();
        let mut text_rows = Vec::with_capacity(batch.len());
        for t in batch {
            let v = if live && !t.external_hit && !t.prompt_ids.is_empty() {
                match unique.get(t.prompt_ids.as_slice()) {
                    Some(&v) => v,
                    None => {
                        let v = self
                            .srm
                            .text_branch(g, &t.prompt_ids)
                            .map_err(|e| SacError::State(e.to_string()))?;
                        unique.insert(&t.prompt_ids, v);
                        v
                    }
                }
            } else {
                g.constant(Tensor::row(t.state.text.clone()))
            };
            text_rows.push(v);
        }
        let text = g.concat_rows(&text_rows);
        let numeric: Vec<Vec<f64>> = batch.iter().map(|t| t.state.numeric.clone()).collect();
        let numeric = g.constant(Tensor::from_rows(&numeric)?);
        Ok(g.concat_cols(&[text, numeric]))
    }
}
