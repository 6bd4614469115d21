use std::f64::consts::PI;

use rand::Rng;

use super::UeState;

/// Heading changes a UE may take at each decision epoch.
pub const HEADING_OFFSETS: [f64; 7] = [
    -PI / 3.0,
    -PI / 6.0,
    -PI / 12.0,
    0.0,
    PI / 12.0,
    PI / 6.0,
    PI / 3.0,
];

pub const MIN_SPEED: f64 = 10.0;
pub const MAX_SPEED: f64 = 20.0;

/// Advance `ue` by `speed·dt` along its heading, reflecting off the edges of
/// `[-half_width, half_width]²`, then redraw the heading offset for the next
/// epoch.
pub fn update_mobility(ue: &mut UeState, dt: f64, half_width: f64, rng: &mut impl Rng) {
    let (dx, dy) = (ue.speed * dt * ue.heading.cos(), ue.speed * dt * ue.heading.sin());
    let (mut x, mut y) = (ue.position[0] + dx, ue.position[1] + dy);
    let mut heading = ue.heading;
    let w = half_width;
    loop {
        if x > w {
            x = 2.0 * w - x;
            heading = PI - heading;
        } else if x < -w {
            x = -2.0 * w - x;
            heading = PI - heading;
        } else {
            break;
        }
    }
    loop {
        if y > w {
            y = 2.0 * w - y;
            heading = -heading;
        } else if y < -w {
            y = -2.0 * w - y;
            heading = -heading;
        } else {
            break;
        }
    }
    ue.position = [x, y];
    let offset = HEADING_OFFSETS[rng.random_range(0..HEADING_OFFSETS.len())];
    ue.heading = (heading + offset).rem_euclid(2.0 * PI);
}
