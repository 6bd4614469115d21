use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{CliError, RunConfig, Variant};
use crate::encoder::ExternalEmbeddings;
use crate::env::trajectory::TrajectoryWriter;
use crate::marl::{
    evaluate, run_training, AgentPool, EvalReport, PoolConfig, TrainReport, CHECKPOINT_DIR,
};
use crate::nn::checkpoint::load_params;
use crate::nn::Param;
use crate::rng::{self, label};
use crate::sac::ActionMode;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const EVAL_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(variant.as_str()).join(format!("seed{seed}"))
}

/// Build every component of a resolved config, with adapters not yet pretrained.
fn build_pool(cfg: &RunConfig, seed: u64) -> Result<AgentPool, CliError> {
    let env = cfg.env_spec();
    let encoder = cfg.effective_encoder();
    let mut pool = AgentPool::new(PoolConfig {
        env: &env,
        sac: &cfg.sac,
        encoder: &encoder,
        adapter: &cfg.adapter,
        template: cfg.template()?,
        n_ctx: cfg.prompt.n_ctx,
        static_text: cfg.variant == Variant::MarlNoPrompt,
        seed,
    })?;
    if cfg.variant == Variant::PaMrlAltEncoder {
        if let Some(p) = &cfg.alt_encoder.embeddings {
            let table = ExternalEmbeddings::load(p, encoder.d_model).map_err(crate::marl::MarlError::from)?;
            pool.srm.external = Some(table);
        }
    }
    Ok(pool)
}

/// Pretrain the adapters and train one seed into `dir`.
pub fn train_run(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<TrainReport, CliError> {
    let cfg = cfg.resolved(seed);
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SNAPSHOT_FILE), cfg.snapshot()?)?;
    let mut pool = build_pool(&cfg, seed)?;
    let pre = pool.pretrain_adapters(&cfg.adapter)?;
    log::info!(
        "{} seed {seed}: adapters aligned (loss {:.4}, mse {:.4})",
        cfg.variant,
        pre.loss.last().copied().unwrap_or(f64::NAN),
        pre.alignment.last().copied().unwrap_or(f64::NAN)
    );
    let report = run_training(&mut pool, &cfg.train_loop(seed), Some(dir))?;
    log::info!(
        "{} seed {seed}: {} iterations, final smoothed reward {:.4}",
        cfg.variant,
        report.iterations_run,
        report.final_smoothed_reward()
    );
    Ok(report)
}

/// Train every configured seed in parallel, each into its own run directory.
pub fn train_all(cfg: &RunConfig) -> Vec<(u64, PathBuf, Result<TrainReport, CliError>)> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let dir = run_dir(&cfg.out, cfg.variant, seed);
            let r = train_run(cfg, seed, &dir);
            (seed, dir, r)
        })
        .collect()
}

/// Reload a finished run and evaluate its deterministic policies.
///
/// Writes `eval.csv` (`actor,episode,return`) and a per-step dump of actor
/// 1's first evaluation episode.
pub fn eval_run(dir: &Path, episodes: Option<usize>) -> Result<EvalReport, CliError> {
    let cfg = RunConfig::load(&dir.join(SNAPSHOT_FILE))?;
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let mut pool = build_pool(&cfg, seed)?;
    let ckpt = dir.join(CHECKPOINT_DIR);
    let load = |name: &str, params: Vec<&mut Param>| {
        let p = ckpt.join(name);
        load_params(&p, params).map_err(|e| CliError::Export(format!("{}: {e}", p.display())))
    };
    load("srm.ckpt", pool.srm.params_mut())?;
    pool.srm.mark_pretrained();
    for (i, a) in pool.actors.iter_mut().enumerate() {
        load(&format!("actor{}.ckpt", i + 1), a.params_mut())?;
    }
    let n = episodes.unwrap_or(cfg.train.eval_episodes).max(1);
    let horizon = cfg.train.horizon;
    let report = evaluate(&pool.srm, &pool.actors, &mut pool.eval_envs, n, horizon, seed)?;

    let mut w = csv::Writer::from_path(dir.join(EVAL_FILE))?;
    w.write_record(["actor", "episode", "return"])?;
    for (i, rs) in report.returns.iter().enumerate() {
        for (e, r) in rs.iter().enumerate() {
            w.write_record([(i + 1).to_string(), e.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;

    let env = &mut pool.eval_envs[0];
    let mut traj = TrajectoryWriter::create(dir, "eval_trajectory", env.num_slices(), env.ue_slices())?;
    let mut obs = env.reset(rng::derive(seed, &[label::EVAL, 0, 0]));
    let mut unused = rng::stream(0, &[]);
    for t in 0..horizon {
        let rep = pool.srm.represent(&obs).map_err(crate::marl::MarlError::from)?;
        let a = pool.actors[0]
            .act(&rep.fused.concat(), ActionMode::Deterministic, &mut unused)
            .map_err(crate::marl::MarlError::from)?;
        let s = env.step(&a.action).map_err(crate::marl::MarlError::from)?;
        traj.record(t as u64, &s)?;
        obs = s.observation;
    }
    traj.flush()?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n_ctx: usize,
    pub seed: u64,
    pub max_smoothed_reward: Option<f64>,
    pub iterations_to_converge: Option<usize>,
    pub argmax: bool,
    pub error: Option<String>,
}

/// One run per `n_ctx` value per seed under `<out>/sweep/`, then
/// `sweep.csv` with the arg-max row (highest max smoothed reward, first on
/// ties) marked. Failed runs are recorded and the sweep continues.
pub fn sweep(cfg: &RunConfig, values: &[usize]) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one n_ctx value".into()));
    }
    if cfg.variant == Variant::MarlNoPrompt && values.iter().any(|&v| v > 0) {
        return Err(CliError::Config(
            "variant marl-noprompt forces n_ctx = 0; sweep a prompt variant instead".into(),
        ));
    }
    cfg.validate()?;
    let root = cfg.out.join("sweep");
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let mut c = cfg.clone();
            c.prompt.n_ctx = v;
            let dir = root.join(format!("n_ctx{v}")).join(format!("seed{seed}"));
            match train_run(&c, seed, &dir) {
                Ok(r) => SweepRow {
                    n_ctx: v,
                    seed,
                    max_smoothed_reward: Some(r.max_smoothed_reward()),
                    iterations_to_converge: Some(r.iterations_to_converge()),
                    argmax: false,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep n_ctx={v} seed={seed} failed: {e}");
                    SweepRow {
                        n_ctx: v,
                        seed,
                        max_smoothed_reward: None,
                        iterations_to_converge: None,
                        argmax: false,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    if let Some(best) = argmax(&rows) {
        rows[best].argmax = true;
    }
    fs::create_dir_all(&root)?;
    let mut w = csv::Writer::from_path(root.join(SWEEP_FILE))?;
    w.write_record(["n_ctx", "seed", "max_smoothed_reward", "iterations_to_converge", "argmax", "error"])?;
    for r in &rows {
        w.write_record([
            r.n_ctx.to_string(),
            r.seed.to_string(),
            r.max_smoothed_reward.map_or(String::new(), |v| v.to_string()),
            r.iterations_to_converge.map_or(String::new(), |v| v.to_string()),
            u8::from(r.argmax).to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

fn argmax(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(v) = r.max_smoothed_reward.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}
