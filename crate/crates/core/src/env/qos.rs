//! Per-UE rates, latencies and per-slice KPIs.

use super::channel::snr;
use super::{Allocation, CellConfig, EnvError, SliceKind};

/// Floor on the drain rate used for latency, bit/s.
pub const MIN_RATE_BPS: f64 = 1.0;

/// Shannon rate of every UE: `C_i = Σ_k e_{i,k}·b_{l(i),k}·B_RB·log₂(1+SNR_{i,k})`.
///
/// `gains[i][k]` is the channel power gain of UE `i` on RB `k`.
pub fn compute_throughput(
    cell: &CellConfig,
    alloc: &Allocation,
    ue_slices: &[usize],
    gains: &[Vec<f64>],
) -> Vec<f64> {
    ue_slices
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            (0..alloc.num_rbs())
                .filter(|&k| alloc.e(i, k) && alloc.b(l, k))
                .map(|k| cell.rb_bandwidth_hz * (1.0 + snr(cell, gains[i][k])).log2())
                .sum()
        })
        .collect()
}

/// Time to drain one packet at the achieved rate, capped at `max_latency_s`.
pub fn compute_latency(cell: &CellConfig, rate_bps: f64) -> f64 {
    (cell.packet_size_bits / rate_bps.max(MIN_RATE_BPS)).min(cell.max_latency_s)
}

/// The KPI of one slice from its UEs' rates and latencies.
///
/// `rate_thresholds` is only read for mMTC; `latencies` only for URLLC.
pub fn compute_qos(
    kind: SliceKind,
    rates: &[f64],
    latencies: &[f64],
    rate_thresholds: &[f64],
) -> Result<f64, EnvError> {
    let n = rates.len();
    if n == 0 {
        return Err(EnvError::EmptySlice);
    }
    let q = match kind {
        SliceKind::Embb => rates.iter().sum::<f64>() / n as f64,
        SliceKind::Mmtc => {
            if rate_thresholds.len() != n {
                return Err(EnvError::DimensionMismatch {
                    expected: n,
                    got: rate_thresholds.len(),
                });
            }
            let above = rates
                .iter()
                .zip(rate_thresholds)
                .filter(|(c, t)| c > t)
                .count();
            above as f64 / n as f64 * rates.iter().sum::<f64>()
        }
        SliceKind::Urllc => {
            if latencies.len() != n {
                return Err(EnvError::DimensionMismatch {
                    expected: n,
                    got: latencies.len(),
                });
            }
            latencies.iter().copied().fold(0.0, f64::max)
        }
    };
    Ok(q)
}

/// Per-slice QoS values `Q^l`, indexed by slice.
#[derive(Clone, Debug, PartialEq)]
pub struct QosVector(pub Vec<f64>);

impl QosVector {
    pub fn get(&self, slice: usize) -> f64 {
        self.0[slice]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::channel::path_gain;

    #[test]
    fn embb_mean() {
        assert_eq!(compute_qos(SliceKind::Embb, &[10.0, 20.0, 30.0], &[], &[]).unwrap(), 20.0);
    }

    #[test]
    fn mmtc_density_weighted() {
        let q = compute_qos(SliceKind::Mmtc, &[5.0, 15.0], &[], &[10.0, 10.0]).unwrap();
        assert_eq!(q, 10.0);
    }

    #[test]
    fn urllc_worst_case() {
        let q = compute_qos(SliceKind::Urllc, &[1.0; 3], &[1.0, 3.0, 2.0], &[]).unwrap();
        assert_eq!(q, 3.0);
    }

    #[test]
    fn empty_slice_is_error() {
        assert!(matches!(
            compute_qos(SliceKind::Embb, &[], &[], &[]),
            Err(EnvError::EmptySlice)
        ));
    }

    fn unit_snr_cell() -> (CellConfig, f64) {
        let cell = CellConfig::default();
        // gain that gives SNR exactly 1
        let g = cell.noise_per_rb_w() / cell.tx_power_w();
        (cell, g)
    }

    #[test]
    fn one_rb_at_unit_snr() {
        let (cell, g) = unit_snr_cell();
        let mut a = Allocation::empty(1, 2, 1);
        a.set_b(0, 0, true);
        a.set_e(0, 0, true);
        let rates = compute_throughput(&cell, &a, &[0], &[vec![g, g]]);
        assert!((rates[0] - 2.0e5).abs() < 1e-6);
    }

    #[test]
    fn unassigned_ue_gets_nothing_and_doubling_rbs_doubles_rate() {
        let (cell, _) = unit_snr_cell();
        let g = path_gain(&cell, 50.0);
        let gains = vec![vec![g; 4], vec![g; 4]];
        let mut a = Allocation::empty(1, 4, 2);
        a.set_b(0, 0, true);
        a.set_e(0, 0, true);
        let one = compute_throughput(&cell, &a, &[0, 0], &gains);
        assert_eq!(one[1], 0.0);
        a.set_b(0, 1, true);
        a.set_e(0, 1, true);
        let two = compute_throughput(&cell, &a, &[0, 0], &gains);
        assert!((two[0] - 2.0 * one[0]).abs() < 1e-6 * one[0]);
    }

    #[test]
    fn latency_is_capped() {
        let cell = CellConfig::default();
        assert_eq!(compute_latency(&cell, 0.0), cell.max_latency_s);
        assert!((compute_latency(&cell, 12e6) - 1e-3).abs() < 1e-15);
    }
}
