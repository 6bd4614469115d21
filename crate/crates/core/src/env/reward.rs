//! Sigmoid QoS reward with an exponential penalty for severe shortfalls.

use super::{EnvError, QosVector, RewardConfig, SliceKind};
use crate::nn::sigmoid;

/// Normalized signed deviation of `q` from `threshold`; positive means better
/// than the target. Latency uses `(thr − q)/thr` so lower latency scores higher.
pub fn normalized_deviation(kind: SliceKind, q: f64, threshold: f64) -> f64 {
    if kind.higher_is_better() {
        (q - threshold) / threshold
    } else {
        (threshold - q) / threshold
    }
}

/// `r_0 = 1 / (1 + exp(−α·dev))`.
pub fn slice_reward(alpha: f64, deviation: f64) -> f64 {
    sigmoid(alpha * deviation)
}

/// Penalty term of a slice: `exp(−δ·dev)` when `dev < −margin`, else zero.
pub fn slice_penalty(delta: f64, margin: f64, deviation: f64) -> f64 {
    if deviation < -margin {
        (-delta * deviation).exp()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown {
    /// `r_Q − penalty`
    pub total: f64,
    /// `r_0^l` per slice.
    pub per_slice: Vec<f64>,
    pub penalty: f64,
    /// `Σ_l w_l·r_0^l`, logged only.
    pub utility: f64,
}

/// Per-slice inputs of the reward: kind, threshold, normalized weight, margin.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTarget {
    pub kind: SliceKind,
    pub threshold: f64,
    pub weight: f64,
    pub margin: f64,
}

pub fn compute_reward(
    qos: &QosVector,
    targets: &[SliceTarget],
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, EnvError> {
    if qos.len() != targets.len() {
        return Err(EnvError::DimensionMismatch {
            expected: targets.len(),
            got: qos.len(),
        });
    }
    let mut per_slice = Vec::with_capacity(targets.len());
    let mut penalty = 0.0;
    let mut utility = 0.0;
    for (l, t) in targets.iter().enumerate() {
        let q = qos.get(l);
        if !q.is_finite() {
            return Err(EnvError::NonFinite(format!("QoS of slice {}", l + 1)));
        }
        if !(t.threshold > 0.0) {
            return Err(EnvError::InvalidConfig(format!(
                "slice {}: threshold must be positive",
                l + 1
            )));
        }
        let dev = normalized_deviation(t.kind, q, t.threshold);
        let r0 = slice_reward(cfg.alpha, dev);
        penalty += slice_penalty(cfg.delta, t.margin, dev);
        utility += t.weight * r0;
        per_slice.push(r0);
    }
    let r_q: f64 = per_slice.iter().sum();
    Ok(RewardBreakdown {
        total: r_q - penalty,
        per_slice,
        penalty,
        utility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(kind: SliceKind, thr: f64, margin: f64) -> SliceTarget {
        SliceTarget {
            kind,
            threshold: thr,
            weight: 1.0,
            margin,
        }
    }

    #[test]
    fn at_threshold_is_exactly_half() {
        for kind in [SliceKind::Embb, SliceKind::Mmtc, SliceKind::Urllc] {
            let r = compute_reward(
                &QosVector(vec![3.7]),
                &[target(kind, 3.7, 0.1)],
                &RewardConfig::default(),
            )
            .unwrap();
            assert_eq!(r.per_slice[0], 0.5);
            assert_eq!(r.penalty, 0.0);
        }
    }

    #[test]
    fn large_qos_saturates() {
        let r = slice_reward(5.0, normalized_deviation(SliceKind::Embb, 1e9, 1.0));
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_threshold_penalty() {
        let cfg = RewardConfig {
            alpha: 5.0,
            delta: 1.0,
            margin: 0.1,
        };
        let r = compute_reward(&QosVector(vec![0.5]), &[target(SliceKind::Embb, 1.0, 0.1)], &cfg)
            .unwrap();
        assert!((r.penalty - 0.5f64.exp()).abs() < 1e-12);
        assert!((r.penalty - 1.64872).abs() < 1e-5);
    }

    #[test]
    fn latency_direction_is_flipped() {
        let lo = slice_reward(5.0, normalized_deviation(SliceKind::Urllc, 0.001, 0.002));
        let hi = slice_reward(5.0, normalized_deviation(SliceKind::Urllc, 0.003, 0.002));
        assert!(lo > 0.5 && hi < 0.5);
    }

    #[test]
    fn non_finite_qos_is_error() {
        let e = compute_reward(
            &QosVector(vec![f64::NAN]),
            &[target(SliceKind::Embb, 1.0, 0.1)],
            &RewardConfig::default(),
        );
        assert!(matches!(e, Err(EnvError::NonFinite(_))));
    }
}
