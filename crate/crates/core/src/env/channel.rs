//! Rayleigh block fading over a log-distance path loss.

use rand_distr::{Distribution, StandardNormal};

use super::{CellConfig, UeState};
use crate::rng::{self, label};

/// Closest distance used for path loss, metres.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Linear large-scale gain at `distance_m` (clamped to at least 1 m).
pub fn path_gain(cell: &CellConfig, distance_m: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    let loss_db = cell.reference_loss_db + 10.0 * cell.path_loss_exponent * d.log10();
    10f64.powf(-loss_db / 10.0)
}

/// Distance from the DU at the origin, after clamping the position to the cell.
pub fn distance_to_du(cell: &CellConfig, position: [f64; 2]) -> f64 {
    let w = cell.cell_half_width_m;
    let x = position[0].clamp(-w, w);
    let y = position[1].clamp(-w, w);
    x.hypot(y)
}

/// Per-RB channel power gains `|h|²·PL(d)` for one UE at one decision step.
///
/// `h` is circularly-symmetric complex Gaussian with unit mean power, so each
/// gain is exponentially distributed around the path gain. The draw depends
/// only on `(cell.seed, ue.id, time)`.
pub fn sample_channel(cell: &CellConfig, ue: &UeState, time: u64) -> Vec<f64> {
    let t = if cell.stationary { 0 } else { time };
    let mut rng = rng::stream(cell.seed, &[label::CHANNEL, ue.id as u64, t]);
    let pg = path_gain(cell, distance_to_du(cell, ue.position));
    (0..cell.num_rbs())
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            pg * 0.5 * (re * re + im * im)
        })
        .collect()
}

/// Linear SNR of one RB with channel gain `gain`.
pub fn snr(cell: &CellConfig, gain: f64) -> f64 {
    cell.tx_power_w() * gain / cell.noise_per_rb_w()
}
