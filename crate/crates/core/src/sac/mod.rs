//! Soft actor-critic on fused states: squashed-Gaussian actors, a scalar Q
//! critic, a shared replay buffer and the two gradient updates.

mod actor;
mod critic;
mod replay;
mod update;

pub use actor::{Actor, ActionMode, PolicySample, INIT_LOG_STD, LOG_STD_MAX, LOG_STD_MIN};
pub use critic::Critic;
pub use replay::{ReplayBuffer, SharedReplay, Transition};
pub use update::{
    actor_loss, actor_update, critic_loss, critic_update, td_targets, ActorLoss, ActorStats,
    ActorUpdate,
    CriticStats, StateSource, StoredStates,
};

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum SacError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("replay buffer holds {have} transitions, {need} requested")]
    NotEnoughSamples { have: usize, need: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid SAC configuration: {0}")]
    InvalidConfig(String),
    #[error("state source: {0}")]
    State(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    /// Discount γ.
    pub gamma: f64,
    /// Entropy weight β.
    pub beta: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rate of the context tokens.
    pub context_lr: f64,
    /// Hidden widths shared by actor and critic bodies.
    pub hidden: Vec<usize>,
    /// Keep a Polyak-averaged target critic.
    pub target_critic: bool,
    /// Target weight kept per update: `target ← polyak·target + (1−polyak)·online`.
    pub polyak: f64,
    /// Use `r + γ·Q − β·log π` instead of `r + γ·(Q − β·log π)`.
    pub literal_target: bool,
    /// Zero the bootstrap term on episode-final transitions.
    pub terminal_cutoff: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 0.01,
            batch_size: 128,
            buffer_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            context_lr: 1e-4,
            hidden: vec![600, 700, 700],
            target_critic: false,
            polyak: 0.995,
            literal_target: false,
            terminal_cutoff: false,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("sac.gamma must lie in [0, 1]");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("sac.beta must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("sac.batch_size must be positive");
        }
        if self.batch_size > self.buffer_capacity {
            return bad("sac.batch_size must not exceed sac.buffer_capacity");
        }
        for (name, lr) in [
            ("sac.actor_lr", self.actor_lr),
            ("sac.critic_lr", self.critic_lr),
            ("sac.context_lr", self.context_lr),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(SacError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return bad("sac.hidden widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("sac.polyak must lie in [0, 1]");
        }
        Ok(())
    }
}
