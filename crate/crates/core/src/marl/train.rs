//! Run directory layout written by [`run_training`]:
//!
//! | file              | contents                                                     |
//! |-------------------|--------------------------------------------------------------|
//! | `metrics.csv`     | one row per iteration (columns below)                        |
//! | `ue_rates.csv`    | `iteration,actor,step,ue,slice,rate_bps`, slice ids 1-based  |
//! | `episodes.csv`    | `actor,episode,end_iteration,return`                         |
//! | `events.log`      | tab-separated `iteration`, `event`, `detail` lines           |
//! | `checkpoints/`    | parameter files, `vocab.txt`, `encoder.sha256`               |
//! | `diagnostics.txt` | only after a non-finite abort                                |
//!
//! `metrics.csv` columns: `iteration, env_steps, n_ctx, reward_mean,
//! reward_actor1..N, q_slice1..L, soft_penalty, updated, critic_loss,
//! mean_q, mean_target, actor_loss, entropy, mean_log_std, context_grad_norm,
//! eval_mean, eval_std`. Loss columns are 0 while `updated` is 0. `eval_mean`
//! is the mean over actors of each actor's mean evaluation return and
//! `eval_std` the spread over all evaluation episodes; both are empty on
//! iterations without evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_convergence, evaluate, moving_average, AgentPool, ContextStates, EvalReport, MarlError};
use crate::encoder::{EmbedCache, Srm};
use crate::env::{Environment, Observation};
use crate::nn::{checkpoint::save_params, Adam, Tensor};
use crate::rng::{self, label};
use crate::sac::{
    actor_update, critic_update, ActionMode, Actor, ActorStats, CriticStats, SacError,
    SharedReplay, Transition,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const UE_RATES_FILE: &str = "ue_rates.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainLoopConfig {
    /// `N_t`.
    pub iterations: usize,
    /// Environment steps each actor takes per iteration.
    pub steps_per_iteration: usize,
    /// Steps per training and evaluation episode.
    pub horizon: usize,
    /// `N_e`: episodes per evaluation.
    pub eval_episodes: usize,
    /// Evaluate every this many iterations (and after the last one); 0 disables.
    /// The plateau test runs on the evaluation returns, so with an interval
    /// above 1 its window counts evaluations rather than iterations.
    pub eval_interval: usize,
    /// Transitions required before the first update; never below the batch size.
    pub warmup: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Moving-average window for reported reward curves.
    pub smoothing_window: usize,
    /// Stop at the first converged iteration.
    pub early_stop: bool,
    /// Write UE rates every this many iterations.
    pub ue_rate_stride: usize,
    /// Collect rollouts on one thread, making runs bit-reproducible.
    pub sequential: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainLoopConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            steps_per_iteration: 1,
            horizon: 100,
            eval_episodes: 1,
            eval_interval: 1,
            warmup: 0,
            convergence_window: 100,
            convergence_tol: 1e-3,
            smoothing_window: 50,
            early_stop: true,
            ue_rate_stride: 1,
            sequential: false,
            seed: 1,
        }
    }
}

impl TrainLoopConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: &str| Err(MarlError::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("train.iterations must be at least 1");
        }
        if self.steps_per_iteration == 0 {
            return bad("train.steps_per_iteration must be at least 1");
        }
        if self.horizon == 0 {
            return bad("train.horizon must be at least 1");
        }
        if self.convergence_window < 2 {
            return bad("train.convergence_window must be at least 2");
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return bad("train.convergence_tol must be non-negative");
        }
        if self.smoothing_window == 0 {
            return bad("train.smoothing_window must be at least 1");
        }
        if self.ue_rate_stride == 0 {
            return bad("train.ue_rate_stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Critic,
    Actor(usize),
    Context,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub iterations_run: usize,
    /// Iteration index (0-based) at which the plateau test first held.
    pub converged_at: Option<usize>,
    /// Mean step reward per iteration, averaged over actors.
    pub reward_history: Vec<f64>,
    /// Series the plateau test ran on: the mean evaluation return of every
    /// evaluation, or the step reward when evaluation is disabled.
    pub convergence_history: Vec<f64>,
    pub eval_history: Vec<(usize, EvalReport)>,
    /// Transitions pushed per iteration.
    pub transitions_per_iteration: Vec<usize>,
    /// Update order of every iteration that updated.
    pub update_order: Vec<Vec<UpdateKind>>,
    pub smoothing_window: usize,
}

impl TrainReport {
    /// First converged iteration counted from 1, or the number of iterations run.
    pub fn iterations_to_converge(&self) -> usize {
        self.converged_at.map_or(self.iterations_run, |i| i + 1)
    }

    pub fn smoothed_rewards(&self) -> Vec<f64> {
        moving_average(&self.reward_history, self.smoothing_window)
    }

    pub fn final_smoothed_reward(&self) -> f64 {
        self.smoothed_rewards().last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_smoothed_reward(&self) -> f64 {
        self.smoothed_rewards().into_iter().fold(f64::NAN, f64::max)
    }
}

/// Sum the per-actor context gradients in actor order and take one Adam step
/// on the context tokens. Returns the gradient norm; a no-op without tokens.
pub fn update_context_tokens(
    srm: &mut Srm,
    opt: &mut Adam,
    grads: &[Option<Tensor>],
) -> Result<f64, MarlError> {
    if srm.n_ctx() == 0 || !srm.context.param.trainable() {
        return Ok(0.0);
    }
    let shape = srm.context.values().shape().to_vec();
    let mut total = Tensor::zeros(&shape);
    for g in grads.iter().flatten() {
        if g.shape() != shape.as_slice() {
            return Err(MarlError::Nn(crate::nn::NnError::ShapeMismatch(format!(
                "context gradient {:?}, tokens {:?}",
                g.shape(),
                shape
            ))));
        }
        for (t, v) in total.data_mut().iter_mut().zip(g.data()) {
            *t += v;
        }
    }
    let norm = total.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    opt.step_with(vec![&mut srm.context.param], &[Some(&total)])?;
    Ok(norm)
}

/// Per-actor rollout state.
struct Worker {
    obs: Observation,
    ep_step: usize,
    episode: u64,
    ep_return: f64,
    noise: ChaCha8Rng,
}

/// What one actor saw during one iteration.
#[derive(Default)]
struct Collected {
    reward: f64,
    qos: Vec<f64>,
    soft_penalty: f64,
    steps: usize,
    /// `(step, ue, slice, rate)`.
    rates: Vec<(usize, usize, usize, f64)>,
    /// `(episode, return)`.
    finished: Vec<(u64, f64)>,
}

fn episode_seed(seed: u64, actor: usize, episode: u64) -> u64 {
    rng::derive(seed, &[label::TRAIN_EPISODE, actor as u64, episode])
}

#[allow(clippy::too_many_arguments)]
fn collect(
    i: usize,
    srm: &Srm,
    actor: &Actor,
    env: &mut dyn Environment,
    w: &mut Worker,
    cfg: &TrainLoopConfig,
    replay: &SharedReplay,
    keep_rates: bool,
) -> Result<Collected, MarlError> {
    let mut out = Collected {
        qos: vec![0.0; env.num_slices()],
        ..Collected::default()
    };
    let mut cache = EmbedCache::new();
    for step in 0..cfg.steps_per_iteration {
        let rep = srm.represent_cached(&w.obs, &mut cache)?;
        let a = actor.act(&rep.fused.concat(), ActionMode::Stochastic, &mut w.noise)?;
        let res = env.step(&a.action)?;
        let next = srm.represent_cached(&res.observation, &mut cache)?;
        w.ep_step += 1;
        w.ep_return += res.reward.total;
        let terminal = w.ep_step == cfg.horizon;
        replay.push(Transition {
            state: rep.fused,
            action: a.action,
            reward: res.reward.total,
            next_state: next.fused,
            terminal,
            prompt_ids: rep.prompt_ids,
            external_hit: rep.external_hit,
            actor: i,
        });
        out.reward += res.reward.total;
        for (q, v) in out.qos.iter_mut().zip(res.qos.values()) {
            *q += v;
        }
        out.soft_penalty += res.soft_penalty;
        out.steps += 1;
        if keep_rates {
            let slices = env.ue_slices();
            out.rates
                .extend(res.rates.iter().enumerate().map(|(u, &r)| (step, u, slices[u], r)));
        }
        if terminal {
            out.finished.push((w.episode, w.ep_return));
            w.episode += 1;
            w.ep_step = 0;
            w.ep_return = 0.0;
            w.obs = env.reset(episode_seed(cfg.seed, i, w.episode));
        } else {
            w.obs = res.observation;
        }
    }
    Ok(out)
}

struct RunFiles {
    dir: PathBuf,
    metrics: csv::Writer<BufWriter<File>>,
    rates: csv::Writer<BufWriter<File>>,
    episodes: csv::Writer<BufWriter<File>>,
    events: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, agents: usize, slices: usize) -> Result<Self, MarlError> {
        fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
        let open = |name: &str| -> Result<BufWriter<File>, MarlError> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        let mut metrics = csv::Writer::from_writer(open(METRICS_FILE)?);
        let mut header: Vec<String> = ["iteration", "env_steps", "n_ctx", "reward_mean"]
            .map(String::from)
            .to_vec();
        header.extend((1..=agents).map(|i| format!("reward_actor{i}")));
        header.extend((1..=slices).map(|l| format!("q_slice{l}")));
        header.extend(
            [
                "soft_penalty",
                "updated",
                "critic_loss",
                "mean_q",
                "mean_target",
                "actor_loss",
                "entropy",
                "mean_log_std",
                "context_grad_norm",
                "eval_mean",
                "eval_std",
            ]
            .map(String::from),
        );
        metrics.write_record(&header)?;
        let mut rates = csv::Writer::from_writer(open(UE_RATES_FILE)?);
        rates.write_record(["iteration", "actor", "step", "ue", "slice", "rate_bps"])?;
        let mut episodes = csv::Writer::from_writer(open(EPISODES_FILE)?);
        episodes.write_record(["actor", "episode", "end_iteration", "return"])?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            rates,
            episodes,
            events: open(EVENTS_FILE)?,
        })
    }

    fn event(&mut self, iteration: usize, event: &str, detail: &str) -> Result<(), MarlError> {
        writeln!(self.events, "{iteration}\t{event}\t{detail}")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MarlError> {
        self.metrics.flush()?;
        self.rates.flush()?;
        self.episodes.flush()?;
        self.events.flush()?;
        Ok(())
    }
}

fn save_checkpoints(pool: &AgentPool, dir: &Path) -> Result<(), MarlError> {
    let dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&dir)?;
    for (i, a) in pool.actors.iter().enumerate() {
        save_params(&dir.join(format!("actor{}.ckpt", i + 1)), &a.params())?;
    }
    save_params(&dir.join("critic.ckpt"), &pool.critic.params())?;
    if let Some(t) = &pool.critic.target {
        save_params(&dir.join("critic_target.ckpt"), &t.params())?;
    }
    save_params(&dir.join("srm.ckpt"), &pool.srm.params())?;
    save_params(&dir.join("encoder.ckpt"), &pool.srm.encoder.params())?;
    fs::write(dir.join("vocab.txt"), pool.srm.vocab.to_file_contents())?;
    fs::write(dir.join("encoder.sha256"), format!("{}\n", pool.srm.encoder.fingerprint()))?;
    Ok(())
}

fn fmt_stats(c: &CriticStats, a: &ActorStats) -> String {
    format!(
        "critic_loss={} mean_q={} mean_target={} actor_loss={} entropy={} mean_log_std={}",
        c.loss, c.mean_q, c.mean_target, a.loss, a.entropy, a.mean_log_std
    )
}

fn write_diagnostics(
    pool: &AgentPool,
    dir: &Path,
    iteration: usize,
    what: &str,
    last: &str,
) -> Result<(), MarlError> {
    let finite = |ps: Vec<&crate::nn::Param>| ps.iter().all(|p| p.value.is_finite());
    let mut s = format!("iteration: {iteration}\nfailure: {what}\nlast update stats: {last}\n");
    for (i, a) in pool.actors.iter().enumerate() {
        s += &format!("actor{} parameters finite: {}\n", i + 1, finite(a.params()));
    }
    s += &format!("critic parameters finite: {}\n", finite(pool.critic.params()));
    s += &format!("context tokens finite: {}\n", pool.srm.context.values().is_finite());
    fs::write(dir.join(DIAGNOSTICS_FILE), s)?;
    Ok(())
}

fn nonfinite_label(e: &SacError) -> Option<String> {
    match e {
        SacError::NonFinite(w) => Some(w.clone()),
        _ => None,
    }
}

/// Train every actor, the critic and the context tokens.
///
/// With `out` set, metrics, logs and final checkpoints go to that directory.
/// Rollouts run concurrently unless `cfg.sequential`; sequential runs are
/// bit-reproducible.
pub fn run_training(
    pool: &mut AgentPool,
    cfg: &TrainLoopConfig,
    out: Option<&Path>,
) -> Result<TrainReport, MarlError> {
    cfg.validate()?;
    if !pool.srm.is_pretrained() {
        return Err(MarlError::NotPretrained);
    }
    let n = pool.num_agents();
    let slices = pool.num_slices();
    let mut files = match out {
        Some(d) => Some(RunFiles::create(d, n, slices)?),
        None => None,
    };
    if let Some(f) = files.as_mut() {
        f.event(
            0,
            "start",
            &format!(
                "agents={n} n_ctx={} seed={} sequential={} encoder={}",
                pool.srm.n_ctx(),
                cfg.seed,
                cfg.sequential,
                pool.srm.encoder.fingerprint()
            ),
        )?;
    }

    let replay = SharedReplay::new(pool.sac.buffer_capacity);
    let mut replay_rng = rng::stream(cfg.seed, &[label::REPLAY]);
    let mut update_rng = rng::stream(cfg.seed, &[label::UPDATE_NOISE]);
    let mut workers: Vec<Worker> = pool
        .envs
        .iter_mut()
        .enumerate()
        .map(|(i, env)| Worker {
            obs: env.reset(episode_seed(cfg.seed, i, 0)),
            ep_step: 0,
            episode: 0,
            ep_return: 0.0,
            noise: rng::stream(cfg.seed, &[label::POLICY_NOISE, i as u64]),
        })
        .collect();
    let warmup = cfg.warmup.max(pool.sac.batch_size);
    let mut report = TrainReport {
        smoothing_window: cfg.smoothing_window,
        ..TrainReport::default()
    };
    let mut env_steps = 0u64;
    let mut warmed = false;

    for it in 0..cfg.iterations {
        // rollouts
        let keep_rates = files.is_some() && it % cfg.ue_rate_stride == 0;
        let before = replay.pushed();
        let collected: Vec<Collected> = {
            let srm = &pool.srm;
            let actors = &pool.actors;
            let replay = &replay;
            let jobs = pool.envs.iter_mut().zip(workers.iter_mut()).enumerate();
            let run = |(i, (env, w)): (usize, (&mut Box<dyn Environment>, &mut Worker))| {
                collect(i, srm, &actors[i], env.as_mut(), w, cfg, replay, keep_rates)
            };
            if cfg.sequential {
                jobs.map(run).collect::<Result<_, _>>()?
            } else {
                jobs.collect::<Vec<_>>()
                    .into_par_iter()
                    .map(run)
                    .collect::<Result<_, _>>()?
            }
        };
        let pushed = (replay.pushed() - before) as usize;
        report.transitions_per_iteration.push(pushed);
        env_steps += pushed as u64;

        // learner: critic, then every actor, then the context tokens
        let mut order = Vec::new();
        let mut cstats = CriticStats::default();
        let mut astats = ActorStats::default();
        let mut ctx_norm = 0.0;
        let updated = replay.len() >= warmup;
        if updated {
            if !warmed {
                warmed = true;
                if let Some(f) = files.as_mut() {
                    f.event(it, "updates_start", &format!("buffer={}", replay.len()))?;
                }
            }
            let result = (|| -> Result<(), SacError> {
                let batch = replay.sample(pool.sac.batch_size, &mut replay_rng)?;
                cstats = critic_update(
                    &mut pool.critic,
                    &mut pool.critic_opt,
                    &pool.actors,
                    &batch,
                    &pool.sac,
                    &mut update_rng,
                )?;
                order.push(UpdateKind::Critic);
                let mut ctx_grads = Vec::with_capacity(n);
                let mut sums = ActorStats::default();
                for i in 0..n {
                    let batch = replay.sample(pool.sac.batch_size, &mut replay_rng)?;
                    let source = ContextStates { srm: &pool.srm };
                    let u = actor_update(
                        &mut pool.actors[i],
                        &mut pool.actor_opts[i],
                        &pool.critic,
                        &batch,
                        &source,
                        &pool.sac,
                        &mut update_rng,
                    )?;
                    order.push(UpdateKind::Actor(i));
                    sums.loss += u.stats.loss / n as f64;
                    sums.entropy += u.stats.entropy / n as f64;
                    sums.mean_log_std += u.stats.mean_log_std / n as f64;
                    sums.mean_q += u.stats.mean_q / n as f64;
                    ctx_grads.push(u.grads.param(&pool.srm.context.param).cloned());
                }
                astats = sums;
                ctx_norm = update_context_tokens(&mut pool.srm, &mut pool.context_opt, &ctx_grads)
                    .map_err(|e| SacError::State(e.to_string()))?;
                if !ctx_norm.is_finite() {
                    return Err(SacError::NonFinite("context gradient".into()));
                }
                order.push(UpdateKind::Context);
                Ok(())
            })();
            if let Err(e) = result {
                if let Some(what) = nonfinite_label(&e) {
                    if let Some(f) = files.as_mut() {
                        f.event(it, "abort", &format!("non-finite {what}"))?;
                        f.flush()?;
                        write_diagnostics(pool, &f.dir, it, &what, &fmt_stats(&cstats, &astats))?;
                    }
                    return Err(MarlError::NonFinite { what, iteration: it });
                }
                return Err(e.into());
            }
            report.update_order.push(order);
        }

        // bookkeeping
        let per_actor: Vec<f64> = collected.iter().map(|c| c.reward / c.steps as f64).collect();
        let reward_mean = per_actor.iter().sum::<f64>() / n as f64;
        report.reward_history.push(reward_mean);
        let total_steps: usize = collected.iter().map(|c| c.steps).sum();
        let mut qos = vec![0.0; slices];
        for c in &collected {
            for (q, v) in qos.iter_mut().zip(&c.qos) {
                *q += v / total_steps as f64;
            }
        }
        let soft = collected.iter().map(|c| c.soft_penalty).sum::<f64>() / total_steps as f64;

        let last = it + 1 == cfg.iterations;
        let evaluating = cfg.eval_interval > 0 && cfg.eval_episodes > 0;
        let eval = if evaluating && ((it + 1) % cfg.eval_interval == 0 || last) {
            let r = evaluate(
                &pool.srm,
                &pool.actors,
                &mut pool.eval_envs,
                cfg.eval_episodes,
                cfg.horizon,
                cfg.seed,
            )?;
            report.eval_history.push((it, r.clone()));
            Some(r)
        } else {
            None
        };
        let point = match &eval {
            Some(r) => Some(r.overall_mean()),
            None if !evaluating => Some(reward_mean),
            None => None,
        };
        let mut converged = false;
        if let Some(p) = point {
            report.convergence_history.push(p);
            converged = check_convergence(
                &report.convergence_history,
                cfg.convergence_window,
                cfg.convergence_tol,
            );
            if converged && report.converged_at.is_none() {
                report.converged_at = Some(it);
            }
        }
        let stopping = last || (converged && cfg.early_stop);

        if let Some(f) = files.as_mut() {
            let mut row = vec![
                it.to_string(),
                env_steps.to_string(),
                pool.srm.n_ctx().to_string(),
                reward_mean.to_string(),
            ];
            row.extend(per_actor.iter().map(f64::to_string));
            row.extend(qos.iter().map(f64::to_string));
            row.push(soft.to_string());
            row.push(u8::from(updated).to_string());
            row.extend(
                [
                    cstats.loss,
                    cstats.mean_q,
                    cstats.mean_target,
                    astats.loss,
                    astats.entropy,
                    astats.mean_log_std,
                    ctx_norm,
                ]
                .map(|v| v.to_string()),
            );
            match &eval {
                Some(r) => {
                    let all: Vec<f64> = r.returns.iter().flatten().copied().collect();
                    let m = all.iter().sum::<f64>() / all.len() as f64;
                    let s = (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
                    row.push(r.overall_mean().to_string());
                    row.push(s.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
            f.metrics.write_record(&row)?;
            for (i, c) in collected.iter().enumerate() {
                for &(step, ue, slice, rate) in &c.rates {
                    f.rates.write_record([
                        it.to_string(),
                        (i + 1).to_string(),
                        step.to_string(),
                        ue.to_string(),
                        (slice + 1).to_string(),
                        rate.to_string(),
                    ])?;
                }
                for &(ep, ret) in &c.finished {
                    f.episodes.write_record([
                        (i + 1).to_string(),
                        ep.to_string(),
                        it.to_string(),
                        ret.to_string(),
                    ])?;
                }
            }
            if converged && report.converged_at == Some(it) {
                f.event(it, "converged", &format!("window={} tol={}", cfg.convergence_window, cfg.convergence_tol))?;
            }
        }
        report.iterations_run = it + 1;
        if stopping {
            break;
        }
    }

    if let Some(mut f) = files {
        save_checkpoints(pool, &f.dir)?;
        f.event(
            report.iterations_run,
            "finish",
            &format!(
                "iterations={} converged_at={} transitions={}",
                report.iterations_run,
                report.converged_at.map_or("none".to_string(), |c| c.to_string()),
                replay.pushed()
            ),
        )?;
        f.flush()?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::testutil::toy_pool;
    use crate::nn::{params_fingerprint, AdamConfig, Graph};
    use crate::sac::{actor_loss, StateSource};

    fn quick(iterations: usize) -> TrainLoopConfig {
        TrainLoopConfig {
            iterations,
            horizon: 5,
            eval_interval: 0,
            convergence_window: 1000,
            sequential: true,
            seed: 3,
            ..TrainLoopConfig::default()
        }
    }

    #[test]
    fn unpretrained_adapters_are_rejected() {
        use crate::marl::testutil::*;
        let env = crate::marl::EnvSpec::SemanticToy(Default::default());
        let mut pool = AgentPool::new(crate::marl::PoolConfig {
            env: &env,
            sac: &small_sac(),
            encoder: &small_encoder(),
            adapter: &small_adapter(),
            template: crate::prompt::PromptTemplate::parse(crate::prompt::DEFAULT_TEMPLATE).unwrap(),
            n_ctx: 2,
            static_text: false,
            seed: 1,
        })
        .unwrap();
        assert!(matches!(run_training(&mut pool, &quick(2), None), Err(MarlError::NotPretrained)));
    }

    #[test]
    fn two_actors_push_two_transitions_per_iteration() {
        let mut pool = toy_pool(2, 2, 1);
        let r = run_training(&mut pool, &quick(12), None).unwrap();
        assert_eq!(r.transitions_per_iteration, vec![2; 12]);
    }

    #[test]
    fn updates_run_critic_then_actors_then_context() {
        let mut pool = toy_pool(3, 2, 1);
        let r = run_training(&mut pool, &quick(6), None).unwrap();
        // batch 8 needs three iterations of three actors
        assert_eq!(r.update_order.len(), 4);
        for order in &r.update_order {
            assert_eq!(
                order,
                &vec![
                    UpdateKind::Critic,
                    UpdateKind::Actor(0),
                    UpdateKind::Actor(1),
                    UpdateKind::Actor(2),
                    UpdateKind::Context
                ]
            );
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut pool = toy_pool(2, 2, 5);
            let mut cfg = quick(10);
            cfg.eval_interval = 5;
            run_training(&mut pool, &cfg, Some(dir.path())).unwrap();
            fs::read(dir.path().join(METRICS_FILE)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stop_still_writes_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = toy_pool(1, 0, 2);
        let cfg = TrainLoopConfig {
            convergence_window: 2,
            convergence_tol: 1e9,
            ..quick(50)
        };
        let r = run_training(&mut pool, &cfg, Some(dir.path())).unwrap();
        assert_eq!(r.converged_at, Some(3));
        assert_eq!(r.iterations_run, 4);
        assert_eq!(r.iterations_to_converge(), 4);
        let ckpt = dir.path().join(CHECKPOINT_DIR);
        for f in ["actor1.ckpt", "critic.ckpt", "srm.ckpt", "encoder.ckpt", "vocab.txt"] {
            assert!(ckpt.join(f).exists(), "{f}");
        }
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 5);
        let header = metrics.lines().next().unwrap();
        for col in ["n_ctx", "reward_actor1", "q_slice3", "critic_loss", "entropy"] {
            assert!(header.split(',').any(|c| c == col), "{col}");
        }
    }

    #[test]
    fn context_tokens_are_shared_and_move() {
        let mut pool = toy_pool(2, 2, 4);
        let before = pool.srm.context.values().clone();
        let encoder = pool.srm.encoder.fingerprint();
        let adapters = params_fingerprint(pool.srm.numeric.params().into_iter().chain(pool.srm.text.params()));
        run_training(&mut pool, &quick(10), None).unwrap();
        assert_ne!(&before, pool.srm.context.values());
        assert_eq!(encoder, pool.srm.encoder.fingerprint());
        assert_eq!(
            adapters,
            params_fingerprint(pool.srm.numeric.params().into_iter().chain(pool.srm.text.params()))
        );
    }

    #[test]
    fn zero_gradients_leave_tokens_unchanged() {
        let mut pool = toy_pool(1, 3, 1);
        let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
        let before = pool.srm.context.values().clone();
        let z = Tensor::zeros(before.shape());
        update_context_tokens(&mut pool.srm, &mut opt, &[Some(z), None]).unwrap();
        assert_eq!(&before, pool.srm.context.values());
    }

    #[test]
    fn no_context_tokens_is_a_no_op() {
        let mut pool = toy_pool(1, 0, 1);
        let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
        let n = update_context_tokens(&mut pool.srm, &mut opt, &[None]).unwrap();
        assert_eq!(n, 0.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn mismatched_gradient_shape_errors() {
        let mut pool = toy_pool(1, 2, 1);
        let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
        let bad = Tensor::zeros(&[3, 3]);
        assert!(update_context_tokens(&mut pool.srm, &mut opt, &[Some(bad)]).is_err());
    }

    #[test]
    fn context_step_does_not_increase_actor_loss() {
        let mut pool = toy_pool(1, 2, 6);
        // fill a batch by running without updates
        let replay = SharedReplay::new(64);
        let mut env_rng = rng::stream(9, &[0]);
        let mut obs = pool.envs[0].reset(1);
        for _ in 0..16 {
            let rep = pool.srm.represent(&obs).unwrap();
            let a = pool.actors[0]
                .act(&rep.fused.concat(), ActionMode::Stochastic, &mut env_rng)
                .unwrap();
            let s = pool.envs[0].step(&a.action).unwrap();
            let next = pool.srm.represent(&s.observation).unwrap();
            replay.push(Transition {
                state: rep.fused,
                action: a.action,
                reward: s.reward.total,
                next_state: next.fused,
                terminal: false,
                prompt_ids: rep.prompt_ids,
                external_hit: rep.external_hit,
                actor: 0,
            });
            obs = s.observation;
        }
        let batch = replay.sample(16, &mut env_rng).unwrap();
        let noise = pool.actors[0].sample_noise(batch.len(), &mut env_rng);
        let loss_and_grad = |pool: &AgentPool| {
            let mut g = Graph::new();
            let states = ContextStates { srm: &pool.srm }.states(&mut g, &batch).unwrap();
            let l = actor_loss(&mut g, &pool.actors[0], &pool.critic, states, &noise, 0.01);
            let v = g.value(l.loss).item();
            let grads = g.backward(l.loss).unwrap();
            (v, grads.param(&pool.srm.context.param).cloned())
        };
        let (before, grad) = loss_and_grad(&pool);
        assert!(grad.is_some());
        let mut opt = Adam::new(AdamConfig::with_lr(1e-4));
        update_context_tokens(&mut pool.srm, &mut opt, &[grad]).unwrap();
        let (after, _) = loss_and_grad(&pool);
        assert!(after <= before, "{after} > {before}");
    }
}
