use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use super::MarlError;
use crate::encoder::{EmbedCache, Srm};
use crate::env::Environment;
use crate::rng::{self, label};
use crate::sac::{ActionMode, Actor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Mean undiscounted episode return per actor.
    pub mean: Vec<f64>,
    /// Standard deviation of the episode return per actor.
    pub std: Vec<f64>,
    /// Every episode return, `[actor][episode]`.
    pub returns: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn overall_mean(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len().max(1) as f64
    }
}

/// Deterministic-policy returns over `episodes` episodes of `horizon` steps.
/// Episode seeds come from a stream reserved for evaluation.
pub fn evaluate(
    srm: &Srm,
    actors: &[Actor],
    envs: &mut [Box<dyn Environment>],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport, MarlError> {
    let returns = actors
        .par_iter()
        .zip(envs.par_iter_mut())
        .enumerate()
        .map(|(i, (actor, env))| -> Result<Vec<f64>, MarlError> {
            // deterministic actions draw no noise; the stream only satisfies the signature
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let mut cache = EmbedCache::new();
            (0..episodes)
                .map(|e| {
                    let mut obs = env.reset(rng::derive(seed, &[label::EVAL, i as u64, e as u64]));
                    let mut total = 0.0;
                    for _ in 0..horizon {
                        let rep = srm.represent_cached(&obs, &mut cache)?;
                        let a = actor.act(&rep.fused.concat(), ActionMode::Deterministic, &mut unused)?;
                        let s = env.step(&a.action)?;
                        total += s.reward.total;
                        obs = s.observation;
                    }
                    Ok(total)
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean: Vec<f64> = returns
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
        .collect();
    let std = returns
        .iter()
        .zip(&mean)
        .map(|(r, m)| (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len().max(1) as f64).sqrt())
        .collect();
    Ok(EvalReport { mean, std, returns })
}
