use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    /// Mean user throughput, bit/s.
    Embb,
    /// Fraction of UEs above their rate threshold times summed throughput.
    Mmtc,
    /// Worst-case latency, seconds. Lower is better.
    Urllc,
}

impl SliceKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, SliceKind::Urllc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SliceKind::Embb => "embb",
            SliceKind::Mmtc => "mmtc",
            SliceKind::Urllc => "urllc",
        }
    }
}

/// One network slice. Its id is its 1-based position in the slice list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub kind: SliceKind,
    /// Priority weight; weights are normalized to sum to one.
    pub weight: f64,
    /// QoS target in the KPI's own units.
    pub threshold: f64,
    /// UEs of this slice served by each DU.
    pub users: usize,
    /// Per-UE rate threshold (bit/s) for the mMTC availability indicator.
    #[serde(default)]
    pub rate_threshold_bps: f64,
    /// Minimum acceptable QoS. With `slack` it replaces the global penalty margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_qos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// DUs, one learning agent each.
    pub num_dus: usize,
    pub bandwidth_hz: f64,
    pub rb_bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub ue_tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    /// Soft-sharing relaxation penalty (logged only).
    pub relaxation_penalty: f64,
    pub path_loss_exponent: f64,
    /// Path loss at 1 m, dB.
    pub reference_loss_db: f64,
    /// UEs move inside `[-w, w]²` around the DU.
    pub cell_half_width_m: f64,
    /// Seconds between decisions.
    pub decision_interval_s: f64,
    pub packet_size_bits: f64,
    pub max_latency_s: f64,
    /// Freeze UE positions and draw fading once; used by bandit-style tests.
    #[serde(default)]
    pub stationary: bool,
    pub seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            num_dus: 6,
            bandwidth_hz: 20e6,
            rb_bandwidth_hz: 200e3,
            subcarrier_spacing_hz: 15e3,
            ue_tx_power_dbm: 56.0,
            noise_psd_dbm_hz: -174.0,
            relaxation_penalty: 1.0,
            path_loss_exponent: 3.0,
            reference_loss_db: 38.0,
            cell_half_width_m: 250.0,
            decision_interval_s: 1.0,
            packet_size_bits: 12_000.0,
            max_latency_s: 0.006,
            stationary: false,
            seed: 1,
        }
    }
}

impl CellConfig {
    pub fn num_rbs(&self) -> usize {
        (self.bandwidth_hz / self.rb_bandwidth_hz).floor() as usize
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.ue_tx_power_dbm)
    }

    /// Noise power over one RB, watts.
    pub fn noise_per_rb_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.rb_bandwidth_hz
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.num_dus == 0 {
            return bad("cell.num_dus must be at least 1");
        }
        if !(self.rb_bandwidth_hz > 0.0 && self.bandwidth_hz >= self.rb_bandwidth_hz) {
            return bad("cell.bandwidth_hz must hold at least one RB of cell.rb_bandwidth_hz");
        }
        for (name, v) in [
            ("cell.ue_tx_power_dbm", self.ue_tx_power_dbm),
            ("cell.noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("cell.reference_loss_db", self.reference_loss_db),
            ("cell.relaxation_penalty", self.relaxation_penalty),
            ("cell.subcarrier_spacing_hz", self.subcarrier_spacing_hz),
        ] {
            if !v.is_finite() {
                return Err(EnvError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        for (name, v) in [
            ("cell.path_loss_exponent", self.path_loss_exponent),
            ("cell.cell_half_width_m", self.cell_half_width_m),
            ("cell.decision_interval_s", self.decision_interval_s),
            ("cell.packet_size_bits", self.packet_size_bits),
            ("cell.max_latency_s", self.max_latency_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Sigmoid steepness.
    pub alpha: f64,
    /// Penalty severity.
    pub delta: f64,
    /// Relative shortfall tolerated before the penalty applies.
    pub margin: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            delta: 1.0,
            margin: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(EnvError::InvalidConfig("reward.alpha must be positive".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(EnvError::InvalidConfig("reward.delta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(EnvError::InvalidConfig("reward.margin must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything one DU environment needs.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub cell: CellConfig,
    pub slices: Vec<SliceSpec>,
    pub reward: RewardConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.cell.validate()?;
        self.reward.validate()?;
        if self.slices.is_empty() {
            return Err(EnvError::InvalidConfig("at least one slice is required".into()));
        }
        for (i, s) in self.slices.iter().enumerate() {
            let id = i + 1;
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return Err(EnvError::InvalidConfig(format!("slice {id}: weight must be positive")));
            }
            if !(s.threshold.is_finite() && s.threshold > 0.0) {
                return Err(EnvError::InvalidConfig(format!(
                    "slice {id}: threshold must be positive"
                )));
            }
            if s.users == 0 {
                return Err(EnvError::InvalidConfig(format!("slice {id}: users must be at least 1")));
            }
            if s.rate_threshold_bps < 0.0 || !s.rate_threshold_bps.is_finite() {
                return Err(EnvError::InvalidConfig(format!(
                    "slice {id}: rate_threshold_bps must be non-negative"
                )));
            }
            if let Some(d) = s.slack {
                if !(d.is_finite() && d >= 0.0) {
                    return Err(EnvError::InvalidConfig(format!("slice {id}: slack must be >= 0")));
                }
            }
            let m = self.margin_for(i);
            if !(0.0..1.0).contains(&m) {
                return Err(EnvError::InvalidConfig(format!(
                    "slice {id}: min_qos/slack imply a penalty margin of {m}, outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn num_rbs(&self) -> usize {
        self.cell.num_rbs()
    }

    pub fn num_ues(&self) -> usize {
        self.slices.iter().map(|s| s.users).sum()
    }

    /// Slice index of every UE, UEs numbered slice by slice.
    pub fn ue_slices(&self) -> Vec<usize> {
        self.slices
            .iter()
            .enumerate()
            .flat_map(|(l, s)| std::iter::repeat_n(l, s.users))
            .collect()
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.slices.iter().map(|s| s.weight).sum();
        self.slices.iter().map(|s| s.weight / total).collect()
    }

    /// Penalty margin of slice `l`.
    ///
    /// With `min_qos` and `slack` set, the breach level `thr·(1−margin)`
    /// equals `min_qos − slack`; for latency (lower is better) the bound is
    /// mirrored: `thr·(1+margin) = min_qos + slack`.
    pub fn margin_for(&self, l: usize) -> f64 {
        let s = &self.slices[l];
        match (s.min_qos, s.slack) {
            (Some(q), Some(d)) if s.kind.higher_is_better() => 1.0 - (q - d) / s.threshold,
            (Some(q), Some(d)) => (q + d) / s.threshold - 1.0,
            _ => self.reward.margin,
        }
    }

    pub fn margins(&self) -> Vec<f64> {
        (0..self.slices.len()).map(|l| self.margin_for(l)).collect()
    }

    /// Three-slice setup matching the reference scenario.
    pub fn reference() -> Self {
        Self {
            cell: CellConfig::default(),
            slices: vec![
                SliceSpec {
                    kind: SliceKind::Embb,
                    weight: 0.4,
                    threshold: 40e6,
                    users: 3,
                    rate_threshold_bps: 0.0,
                    min_qos: None,
                    slack: None,
                },
                SliceSpec {
                    kind: SliceKind::Mmtc,
                    weight: 0.3,
                    threshold: 60e6,
                    users: 3,
                    rate_threshold_bps: 5e6,
                    min_qos: None,
                    slack: None,
                },
                SliceSpec {
                    kind: SliceKind::Urllc,
                    weight: 0.3,
                    threshold: 0.002,
                    users: 2,
                    rate_threshold_bps: 0.0,
                    min_qos: None,
                    slack: None,
                },
            ],
            reward: RewardConfig::default(),
        }
    }
}
