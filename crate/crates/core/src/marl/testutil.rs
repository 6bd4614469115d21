use super::{AgentPool, EnvSpec, PoolConfig};
use crate::encoder::{AdapterConfig, EncoderConfig};
use crate::env::SemanticToyConfig;
use crate::prompt::{PromptTemplate, DEFAULT_TEMPLATE};
use crate::sac::SacConfig;

pub(crate) fn small_sac() -> SacConfig {
    SacConfig {
        batch_size: 8,
        hidden: vec![16, 16],
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        context_lr: 1e-3,
        ..SacConfig::default()
    }
}

pub(crate) fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        blocks: 1,
        ff_dim: 16,
        ..EncoderConfig::default()
    }
}

pub(crate) fn small_adapter() -> AdapterConfig {
    AdapterConfig {
        fused_dim: 4,
        hidden: 8,
        epochs: 2,
        batch_size: 8,
        pretrain_steps: 16,
        ..AdapterConfig::default()
    }
}

pub(crate) fn toy_pool(agents: usize, n_ctx: usize, seed: u64) -> AgentPool {
    let env = EnvSpec::SemanticToy(SemanticToyConfig {
        agents,
        ..SemanticToyConfig::default()
    });
    let adapter = small_adapter();
    let mut pool = AgentPool::new(PoolConfig {
        env: &env,
        sac: &small_sac(),
        encoder: &small_encoder(),
        adapter: &adapter,
        template: PromptTemplate::parse(DEFAULT_TEMPLATE).unwrap(),
        n_ctx,
        static_text: false,
        seed,
    })
    .unwrap();
    pool.pretrain_adapters(&adapter).unwrap();
    pool
}
