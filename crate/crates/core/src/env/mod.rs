//! The O-RAN slicing environment seen by one DU agent.
//!
//! UEs move inside a square cell, see Rayleigh-faded per-RB channels and are
//! served according to a projected [`Allocation`]. Each step yields per-slice
//! KPIs, the sigmoid/penalty reward and the next [`Observation`].

pub mod allocation;
pub mod channel;
pub mod config;
pub mod mobility;
pub mod qos;
pub mod reward;
mod slicing;
mod toy;
pub mod trajectory;

pub use allocation::{project_action, raw_action_dim, Allocation, Projection};
pub use channel::sample_channel;
pub use config::{CellConfig, EnvConfig, RewardConfig, SliceKind, SliceSpec};
pub use mobility::update_mobility;
pub use qos::{compute_latency, compute_qos, compute_throughput, QosVector};
pub use reward::{compute_reward, RewardBreakdown, SliceTarget};
pub use slicing::SliceEnv;
pub use toy::{SemanticToyConfig, SemanticToyEnv};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("environment stepped before reset")]
    NotReset,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("slice has no UEs")]
    EmptySlice,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UeState {
    pub id: usize,
    /// 0-based slice index.
    pub slice: usize,
    pub position: [f64; 2],
    pub speed: f64,
    pub heading: f64,
    pub gains: Vec<f64>,
    pub rate_bps: f64,
    pub latency_s: f64,
}

impl UeState {
    pub fn new(id: usize, slice: usize, position: [f64; 2], speed: f64, heading: f64) -> Self {
        Self {
            id,
            slice,
            position,
            speed,
            heading,
            gains: Vec::new(),
            rate_bps: 0.0,
            latency_s: 0.0,
        }
    }
}

/// Cap on the normalized QoS level fed to the agent.
pub const MAX_QOS_LEVEL: f64 = 5.0;

/// What an agent sees before acting.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Raw `Q^l` per slice.
    pub qos: Vec<f64>,
    /// `Q^l/thr^l` (inverted for latency), clipped to `[0, MAX_QOS_LEVEL]`.
    pub qos_level: Vec<f64>,
    /// Mean UE throughput per slice, Mb/s; only rendered into prompts.
    pub throughput_mbps: Vec<f64>,
    /// `N^l_u` per slice.
    pub users: Vec<usize>,
    /// Previous executed allocation, flattened `b` then `e`.
    pub prev_action: Vec<f64>,
}

impl Observation {
    pub fn num_slices(&self) -> usize {
        self.qos.len()
    }

    /// Numeric state vector: QoS levels, user shares, previous allocation.
    pub fn features(&self) -> Vec<f64> {
        let total = self.users.iter().sum::<usize>().max(1) as f64;
        self.qos_level
            .iter()
            .copied()
            .chain(self.users.iter().map(|&n| n as f64 / total))
            .chain(self.prev_action.iter().copied())
            .collect()
    }

    pub fn feature_dim(num_slices: usize, action_dim: usize) -> usize {
        2 * num_slices + action_dim
    }

    pub fn is_finite(&self) -> bool {
        self.qos.iter().chain(&self.qos_level).chain(&self.throughput_mbps).all(|v| v.is_finite())
    }
}

pub fn qos_level(kind: SliceKind, q: f64, threshold: f64) -> f64 {
    let level = if kind.higher_is_better() {
        q / threshold
    } else if q > 0.0 {
        threshold / q
    } else {
        MAX_QOS_LEVEL
    };
    level.clamp(0.0, MAX_QOS_LEVEL)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub qos: QosVector,
    /// Per-UE achieved rate, bit/s.
    pub rates: Vec<f64>,
    pub latencies: Vec<f64>,
    pub soft_penalty: f64,
    pub allocation: Allocation,
}

/// Step/reset interface shared by the slicing environment and the toy tasks.
pub trait Environment: Send {
    fn num_slices(&self) -> usize;
    /// Slice index of every UE.
    fn ue_slices(&self) -> &[usize];
    fn action_dim(&self) -> usize;
    fn feature_dim(&self) -> usize {
        Observation::feature_dim(self.num_slices(), self.action_dim())
    }
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, raw_action: &[f64]) -> Result<StepResult, EnvError>;
}
