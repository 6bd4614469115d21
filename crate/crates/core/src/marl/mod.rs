//! The training loop: one actor per DU with its own environment, a shared
//! state-representation module, one centralized critic and a shared replay
//! buffer.
//!
//! Each iteration every actor renders its prompt, encodes and fuses its
//! observation, acts and pushes the transition. Then the critic takes one
//! step, each actor takes one step, and the context tokens take one step on
//! the summed actor-loss gradients.

mod convergence;
mod eval;
mod pool;
mod train;
#[cfg(test)]
pub(crate) mod testutil;

pub use convergence::{check_convergence, moving_average};
pub use eval::{evaluate, EvalReport};
pub use pool::{AgentPool, ContextStates, EnvSpec, PoolConfig};
pub use train::{
    run_training, update_context_tokens, TrainLoopConfig, TrainReport, UpdateKind,
    METRICS_FILE, UE_RATES_FILE, EPISODES_FILE, EVENTS_FILE, CHECKPOINT_DIR, DIAGNOSTICS_FILE,
};

use crate::encoder::EncoderError;
use crate::env::EnvError;
use crate::nn::NnError;
use crate::sac::SacError;

#[derive(Debug, thiserror::Error)]
pub enum MarlError {
    #[error("adapters must be pretrained before training")]
    NotPretrained,
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
