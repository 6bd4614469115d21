use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::channel::sample_channel;
use super::mobility::{update_mobility, MAX_SPEED, MIN_SPEED};
use super::qos::{compute_latency, compute_qos, compute_throughput, QosVector};
use super::reward::{compute_reward, SliceTarget};
use super::{
    project_action, qos_level, raw_action_dim, Allocation, CellConfig, EnvConfig, EnvError,
    Environment, Observation, StepResult, UeState,
};
use crate::rng::{self, label};

/// Slicing environment of one DU.
#[derive(Clone, Debug)]
pub struct SliceEnv {
    config: EnvConfig,
    du: usize,
    /// Working copy of the cell whose seed is specific to the current episode.
    cell: CellConfig,
    ue_slices: Vec<usize>,
    targets: Vec<SliceTarget>,
    ues: Vec<UeState>,
    time: u64,
    prev_action: Vec<f64>,
    mobility_rng: Option<ChaCha8Rng>,
}

impl SliceEnv {
    pub fn new(config: EnvConfig, du: usize) -> Result<Self, EnvError> {
        config.validate()?;
        let weights = config.normalized_weights();
        let targets = config
            .slices
            .iter()
            .enumerate()
            .map(|(l, s)| SliceTarget {
                kind: s.kind,
                threshold: s.threshold,
                weight: weights[l],
                margin: config.margin_for(l),
            })
            .collect();
        let ue_slices = config.ue_slices();
        let dim = raw_action_dim(config.slices.len(), config.num_rbs(), ue_slices.len());
        Ok(Self {
            cell: config.cell.clone(),
            du,
            ue_slices,
            targets,
            ues: Vec::new(),
            time: 0,
            prev_action: vec![0.0; dim],
            mobility_rng: None,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn du(&self) -> usize {
        self.du
    }

    pub fn ues(&self) -> &[UeState] {
        &self.ues
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn targets(&self) -> &[SliceTarget] {
        &self.targets
    }

    pub fn num_rbs(&self) -> usize {
        self.cell.num_rbs()
    }

    /// Project a raw action under this environment's dimensions.
    pub fn project(&self, raw: &[f64]) -> Result<super::Projection, EnvError> {
        project_action(
            raw,
            self.config.slices.len(),
            self.num_rbs(),
            &self.ue_slices,
            self.cell.relaxation_penalty,
        )
    }

    fn observation(&self) -> Observation {
        let rates: Vec<f64> = self.ues.iter().map(|u| u.rate_bps).collect();
        let latencies: Vec<f64> = self.ues.iter().map(|u| u.latency_s).collect();
        let qos = self.slice_qos(&rates, &latencies).expect("slices are non-empty");
        self.observation_from(&qos, &rates)
    }

    fn observation_from(&self, qos: &QosVector, rates: &[f64]) -> Observation {
        let l = self.config.slices.len();
        let mut tput = vec![0.0; l];
        let mut users = vec![0usize; l];
        for (i, &s) in self.ue_slices.iter().enumerate() {
            tput[s] += rates[i];
            users[s] += 1;
        }
        Observation {
            qos: qos.values().to_vec(),
            qos_level: self
                .targets
                .iter()
                .enumerate()
                .map(|(s, t)| qos_level(t.kind, qos.get(s), t.threshold))
                .collect(),
            throughput_mbps: tput
                .iter()
                .zip(&users)
                .map(|(t, &n)| t / n.max(1) as f64 / 1e6)
                .collect(),
            users,
            prev_action: self.prev_action.clone(),
        }
    }

    fn slice_qos(&self, rates: &[f64], latencies: &[f64]) -> Result<QosVector, EnvError> {
        let mut out = Vec::with_capacity(self.config.slices.len());
        for (l, spec) in self.config.slices.iter().enumerate() {
            let idx: Vec<usize> = (0..self.ue_slices.len())
                .filter(|&i| self.ue_slices[i] == l)
                .collect();
            let r: Vec<f64> = idx.iter().map(|&i| rates[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| latencies[i]).collect();
            let thr = vec![spec.rate_threshold_bps; idx.len()];
            out.push(compute_qos(spec.kind, &r, &t, &thr)?);
        }
        Ok(QosVector(out))
    }

    /// Channel gains the next step will see, `[ue][rb]`.
    pub fn peek_gains(&self) -> Vec<Vec<f64>> {
        self.ues
            .iter()
            .map(|ue| sample_channel(&self.cell, ue, self.time))
            .collect()
    }

    /// Execute an already-feasible allocation.
    pub fn step_allocation(&mut self, alloc: &Allocation) -> Result<StepResult, EnvError> {
        self.execute(alloc.clone(), 0.0)
    }

    fn execute(&mut self, alloc: Allocation, soft_penalty: f64) -> Result<StepResult, EnvError> {
        let Some(mut mob_rng) = self.mobility_rng.take() else {
            return Err(EnvError::NotReset);
        };
        if let Err(e) = alloc.validate(&self.ue_slices) {
            self.mobility_rng = Some(mob_rng);
            return Err(EnvError::InvalidConfig(format!("infeasible allocation: {e}")));
        }
        for ue in &mut self.ues {
            ue.gains = sample_channel(&self.cell, ue, self.time);
        }
        let gains: Vec<Vec<f64>> = self.ues.iter().map(|u| u.gains.clone()).collect();
        let rates = compute_throughput(&self.cell, &alloc, &self.ue_slices, &gains);
        let latencies: Vec<f64> = rates.iter().map(|&c| compute_latency(&self.cell, c)).collect();
        for ((ue, &c), &tau) in self.ues.iter_mut().zip(&rates).zip(&latencies) {
            ue.rate_bps = c;
            ue.latency_s = tau;
        }
        let qos = self.slice_qos(&rates, &latencies)?;
        let reward = compute_reward(&qos, &self.targets, &self.config.reward)?;
        if !self.cell.stationary {
            for ue in &mut self.ues {
                update_mobility(
                    ue,
                    self.cell.decision_interval_s,
                    self.cell.cell_half_width_m,
                    &mut mob_rng,
                );
            }
        }
        self.mobility_rng = Some(mob_rng);
        self.time += 1;
        self.prev_action = alloc.flatten();
        let observation = self.observation_from(&qos, &rates);
        Ok(StepResult {
            observation,
            reward,
            qos,
            rates,
            latencies,
            soft_penalty,
            allocation: alloc,
        })
    }
}

impl Environment for SliceEnv {
    fn num_slices(&self) -> usize {
        self.config.slices.len()
    }

    fn ue_slices(&self) -> &[usize] {
        &self.ue_slices
    }

    fn action_dim(&self) -> usize {
        raw_action_dim(self.config.slices.len(), self.num_rbs(), self.ue_slices.len())
    }

    /// Place UEs uniformly in the cell with random speed and heading.
    ///
    /// A stationary cell ignores `seed` so every episode replays the same
    /// positions and fading.
    fn reset(&mut self, seed: u64) -> Observation {
        let base = self.config.cell.seed;
        let episode = if self.cell.stationary {
            rng::derive(base, &[self.du as u64])
        } else {
            rng::derive(base, &[self.du as u64, seed])
        };
        self.cell.seed = episode;
        let mut place = rng::stream(episode, &[label::PLACEMENT]);
        let w = self.cell.cell_half_width_m;
        self.ues = self
            .ue_slices
            .iter()
            .enumerate()
            .map(|(id, &slice)| {
                let pos = [place.random_range(-w..=w), place.random_range(-w..=w)];
                let speed = place.random_range(MIN_SPEED..=MAX_SPEED);
                let heading = place.random_range(0.0..std::f64::consts::TAU);
                let mut ue = UeState::new(id, slice, pos, speed, heading);
                ue.latency_s = self.cell.max_latency_s;
                ue
            })
            .collect();
        self.time = 0;
        self.prev_action = vec![0.0; self.action_dim()];
        self.mobility_rng = Some(rng::stream(episode, &[label::MOBILITY]));
        self.observation()
    }

    fn step(&mut self, raw_action: &[f64]) -> Result<StepResult, EnvError> {
        if self.mobility_rng.is_none() {
            return Err(EnvError::NotReset);
        }
        let p = self.project(raw_action)?;
        self.execute(p.allocation, p.soft_penalty)
    }
}
