use std::sync::Arc;

use rand::Rng;

use super::{Actor, Critic, SacConfig, SacError, Transition};
use crate::nn::{Adam, Gradients, Graph, Tensor, Var};

/// Supplies the fused states of a batch to the actor loss. Implementations
/// may rebuild part of the state in the graph so that gradients reach
/// upstream parameters.
pub trait StateSource {
    fn states(&self, g: &mut Graph, batch: &[Arc<Transition>]) -> Result<Var, SacError>;
}

/// States exactly as stored in the buffer.
#[derive(Clone, Copy, Debug, Default)]
pub struct StoredStates;

impl StateSource for StoredStates {
    fn states(&self, g: &mut Graph, batch: &[Arc<Transition>]) -> Result<Var, SacError> {
        Ok(g.constant(rows(batch.iter().map(|t| t.state.concat()))?))
    }
}

fn rows(it: impl Iterator<Item = Vec<f64>>) -> Result<Tensor, SacError> {
    let rows: Vec<Vec<f64>> = it.collect();
    if rows.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    Ok(Tensor::from_rows(&rows)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub mean_q: f64,
    pub mean_target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    /// `−mean log π`.
    pub entropy: f64,
    pub mean_log_std: f64,
    pub mean_q: f64,
}

#[derive(Debug)]
pub struct ActorUpdate {
    pub stats: ActorStats,
    /// Gradients of the actor loss; includes any tracked upstream parameters.
    pub grads: Gradients,
}

/// `y = r + γ·(Q(s', a') − β·log π(a'|s'))`, `a'` drawn from the actor that
/// produced each transition.
pub fn td_targets(
    batch: &[Arc<Transition>],
    actors: &[Actor],
    critic: &Critic,
    cfg: &SacConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SacError> {
    if batch.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    let n = batch.len();
    let adim = critic.action_dim();
    let mut next_actions = vec![0.0; n * adim];
    let mut next_logp = vec![0.0; n];
    for (k, actor) in actors.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&i| batch[i].actor == k).collect();
        if idx.is_empty() {
            continue;
        }
        let states = rows(idx.iter().map(|&i| batch[i].next_state.concat()))?;
        let noise = actor.sample_noise(idx.len(), rng);
        let mut g = Graph::new();
        let s = g.constant(states);
        let (a, lp, _) = actor.rsample(&mut g, s, &noise, true);
        for (j, &i) in idx.iter().enumerate() {
            next_actions[i * adim..(i + 1) * adim].copy_from_slice(g.value(a).row_slice(j));
            next_logp[i] = g.value(lp).data()[j];
        }
    }
    if let Some(t) = batch.iter().find(|t| t.actor >= actors.len()) {
        return Err(SacError::InvalidConfig(format!(
            "transition from actor {} but only {} actors",
            t.actor,
            actors.len()
        )));
    }
    let next_states = rows(batch.iter().map(|t| t.next_state.concat()))?;
    let next_actions = Tensor::new(vec![n, adim], next_actions)?;
    let q_next = critic.predict_bootstrap(&next_states, &next_actions);
    let y: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let keep = if cfg.terminal_cutoff && t.terminal { 0.0 } else { 1.0 };
            let entropy = cfg.beta * next_logp[i];
            if cfg.literal_target {
                t.reward + keep * (cfg.gamma * q_next[i] - entropy)
            } else {
                t.reward + keep * cfg.gamma * (q_next[i] - entropy)
            }
        })
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SacError::NonFinite("TD target".into()));
    }
    Ok(y)
}

/// `mean((Q(s, a) − y)²)` with `y` held constant.
pub fn critic_loss(
    g: &mut Graph,
    critic: &Critic,
    states: &Tensor,
    actions: &Tensor,
    targets: &[f64],
) -> Result<(Var, Var), SacError> {
    if targets.len() != states.rows() {
        return Err(SacError::DimensionMismatch {
            expected: states.rows(),
            got: targets.len(),
        });
    }
    let s = g.constant(states.clone());
    let a = g.constant(actions.clone());
    let q = critic.q(g, s, a, false);
    let y = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
    let d = g.sub(q, y);
    let sq = g.square(d);
    Ok((g.mean(sq), q))
}

pub fn critic_update(
    critic: &mut Critic,
    adam: &mut Adam,
    actors: &[Actor],
    batch: &[Arc<Transition>],
    cfg: &SacConfig,
    rng: &mut impl Rng,
) -> Result<CriticStats, SacError> {
    let y = td_targets(batch, actors, critic, cfg, rng)?;
    let states = rows(batch.iter().map(|t| t.state.concat()))?;
    let actions = rows(batch.iter().map(|t| t.action.clone()))?;
    let mut g = Graph::new();
    let (loss, q) = critic_loss(&mut g, critic, &states, &actions, &y)?;
    let lv = g.value(loss).item();
    if !lv.is_finite() {
        return Err(SacError::NonFinite("critic loss".into()));
    }
    let mean_q = g.value(q).data().iter().sum::<f64>() / batch.len() as f64;
    let grads = g.backward(loss)?;
    adam.step(critic.params_mut(), &grads)?;
    critic.update_target(cfg.polyak);
    Ok(CriticStats {
        loss: lv,
        mean_q,
        mean_target: y.iter().sum::<f64>() / y.len() as f64,
    })
}

/// Nodes of the actor objective `mean(β·log π(a|s) − Q(s, a))`.
pub struct ActorLoss {
    pub loss: Var,
    pub log_prob: Var,
    pub log_std: Var,
    pub q: Var,
}

/// Build the actor objective on `states` with reparameterization noise
/// `noise`. The critic is frozen and sees `states` detached, so upstream
/// gradients flow only through the policy.
pub fn actor_loss(
    g: &mut Graph,
    actor: &Actor,
    critic: &Critic,
    states: Var,
    noise: &Tensor,
    beta: f64,
) -> ActorLoss {
    let (a, log_prob, log_std) = actor.rsample(g, states, noise, false);
    let s = g.detach(states);
    let q = critic.q(g, s, a, true);
    let ent = g.scale(log_prob, beta);
    let obj = g.sub(ent, q);
    let loss = g.mean(obj);
    ActorLoss {
        loss,
        log_prob,
        log_std,
        q,
    }
}

fn mean_of(g: &Graph, v: Var) -> f64 {
    let t = g.value(v);
    t.data().iter().sum::<f64>() / t.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
pub fn actor_update(
    actor: &mut Actor,
    adam: &mut Adam,
    critic: &Critic,
    batch: &[Arc<Transition>],
    source: &dyn StateSource,
    cfg: &SacConfig,
    rng: &mut impl Rng,
) -> Result<ActorUpdate, SacError> {
    if batch.is_empty() {
        return Err(SacError::EmptyBatch);
    }
    let noise = actor.sample_noise(batch.len(), rng);
    let mut g = Graph::new();
    let states = source.states(&mut g, batch)?;
    let l = actor_loss(&mut g, actor, critic, states, &noise, cfg.beta);
    let lv = g.value(l.loss).item();
    if !lv.is_finite() {
        return Err(SacError::NonFinite("actor loss".into()));
    }
    let stats = ActorStats {
        loss: lv,
        entropy: -mean_of(&g, l.log_prob),
        mean_log_std: mean_of(&g, l.log_std),
        mean_q: mean_of(&g, l.q),
    };
    let grads = g.backward(l.loss)?;
    adam.step(actor.params_mut(), &grads)?;
    Ok(ActorUpdate { stats, grads })
}


#[cfg(test)]
mod fixed_point {
    use super::*;
    use crate::encoder::FusedState;
    use crate::nn::AdamConfig;
    use crate::rng;
    use crate::sac::LOG_STD_MIN;

    /// One state, one (near-deterministic) action, constant reward.
    fn run(iters: usize, lr: f64) -> f64 {
        let mut r = rng::stream(1, &[]);
        let mut actor = Actor::new("actor", 2, 1, &[8], &mut r).unwrap();
        let head = actor.mlp.layers_mut().last_mut().unwrap();
        head.weight.value.data_mut().fill(0.0);
        head.bias.value.data_mut().copy_from_slice(&[0.0, LOG_STD_MIN]);
        let mut critic = Critic::new(2, 1, &[16], false, &mut r).unwrap();
        let s = FusedState {
            text: vec![0.5],
            numeric: vec![-0.5],
        };
        let t = Arc::new(Transition {
            state: s.clone(),
            action: vec![0.0],
            reward: 1.0,
            next_state: s,
            terminal: false,
            prompt_ids: vec![],
            external_hit: false,
            actor: 0,
        });
        let batch = vec![t; 8];
        let cfg = SacConfig {
            gamma: 0.9,
            beta: 0.0,
            ..SacConfig::default()
        };
        let mut adam = Adam::new(AdamConfig::with_lr(lr));
        for _ in 0..iters {
            critic_update(&mut critic, &mut adam, std::slice::from_ref(&actor), &batch, &cfg, &mut r).unwrap();
        }
        let st = Tensor::row(vec![0.5, -0.5]);
        critic.predict(&st, &Tensor::row(vec![0.0]))[0]
    }

    #[test]
    fn converges_to_discounted_sum() {
        let q = run(3000, 3e-3);
        assert!((q - 1.0 / (1.0 - 0.9)).abs() < 1e-2, "{q}");
    }
}
