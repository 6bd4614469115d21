use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    project_action, raw_action_dim, EnvError, Environment, Observation, QosVector,
    RewardBreakdown, StepResult,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticToyConfig {
    /// Independent copies of the task, one learning agent each.
    #[serde(default = "one")]
    pub agents: usize,
    pub num_slices: usize,
    pub num_rbs: usize,
    /// Mean throughput shown in the prompt for the slice in demand, Mb/s.
    pub demand_mbps: f64,
    /// Mean throughput shown for every other slice, Mb/s.
    pub idle_mbps: f64,
}

fn one() -> usize {
    1
}

impl Default for SemanticToyConfig {
    fn default() -> Self {
        Self {
            agents: 1,
            num_slices: 3,
            num_rbs: 2,
            demand_mbps: 50.0,
            idle_mbps: 5.0,
        }
    }
}

/// A task whose reward depends on which slice is currently in demand, while
/// that identity appears only in the prompt text.
///
/// Every step one slice is drawn uniformly as the demanding slice. Its
/// throughput slot in the prompt reads `demand_mbps`, the others `idle_mbps`;
/// the numeric features carry constant QoS levels and user shares. The
/// reward is the fraction of RBs given to the demanding slice.
#[derive(Clone, Debug)]
pub struct SemanticToyEnv {
    cfg: SemanticToyConfig,
    seed: u64,
    ue_slices: Vec<usize>,
    demand: usize,
    prev_action: Vec<f64>,
    rng: Option<ChaCha8Rng>,
}

impl SemanticToyEnv {
    pub fn new(cfg: SemanticToyConfig, seed: u64) -> Result<Self, EnvError> {
        if cfg.num_slices == 0 || cfg.num_rbs == 0 || cfg.agents == 0 {
            return Err(EnvError::InvalidConfig(
                "semantic toy needs at least one agent, slice and RB".into(),
            ));
        }
        let ue_slices: Vec<usize> = (0..cfg.num_slices).collect();
        let dim = raw_action_dim(cfg.num_slices, cfg.num_rbs, ue_slices.len());
        Ok(Self {
            seed,
            ue_slices,
            demand: 0,
            prev_action: vec![0.0; dim],
            rng: None,
            cfg,
        })
    }

    /// Index of the slice currently in demand.
    pub fn demand(&self) -> usize {
        self.demand
    }

    fn observation(&self) -> Observation {
        let l = self.cfg.num_slices;
        Observation {
            qos: vec![1.0; l],
            qos_level: vec![1.0; l],
            throughput_mbps: (0..l)
                .map(|s| {
                    if s == self.demand {
                        self.cfg.demand_mbps
                    } else {
                        self.cfg.idle_mbps
                    }
                })
                .collect(),
            users: vec![1; l],
            prev_action: self.prev_action.clone(),
        }
    }
}

impl Environment for SemanticToyEnv {
    fn num_slices(&self) -> usize {
        self.cfg.num_slices
    }

    fn ue_slices(&self) -> &[usize] {
        &self.ue_slices
    }

    fn action_dim(&self) -> usize {
        raw_action_dim(self.cfg.num_slices, self.cfg.num_rbs, self.ue_slices.len())
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut r = rng::stream(self.seed, &[seed]);
        self.demand = r.random_range(0..self.cfg.num_slices);
        self.rng = Some(r);
        self.prev_action = vec![0.0; self.action_dim()];
        self.observation()
    }

    fn step(&mut self, raw_action: &[f64]) -> Result<StepResult, EnvError> {
        if self.rng.is_none() {
            return Err(EnvError::NotReset);
        }
        let p = project_action(
            raw_action,
            self.cfg.num_slices,
            self.cfg.num_rbs,
            &self.ue_slices,
            0.0,
        )?;
        let alloc = p.allocation;
        let k = self.cfg.num_rbs as f64;
        let shares: Vec<f64> = (0..self.cfg.num_slices)
            .map(|l| alloc.slice_rbs(l) as f64 / k)
            .collect();
        let total = shares[self.demand];
        let mut per_slice = vec![0.0; self.cfg.num_slices];
        per_slice[self.demand] = total;
        let reward = RewardBreakdown {
            total,
            per_slice,
            penalty: 0.0,
            utility: total,
        };
        let rates: Vec<f64> = (0..self.ue_slices.len())
            .map(|u| (0..self.cfg.num_rbs).filter(|&rb| alloc.e(u, rb)).count() as f64 * 1e6)
            .collect();
        self.prev_action = alloc.flatten();
        let r = self.rng.as_mut().unwrap();
        self.demand = r.random_range(0..self.cfg.num_slices);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            qos: QosVector(shares),
            latencies: vec![0.0; rates.len()],
            rates,
            soft_penalty: p.soft_penalty,
            allocation: alloc,
        })
    }
}
