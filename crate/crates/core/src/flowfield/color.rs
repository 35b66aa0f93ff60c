//! Flow visualization on the 55-entry Middlebury color wheel.
//!
//! The wheel is built from six ramps (red-yellow 15, yellow-green 6,
//! green-cyan 4, cyan-blue 11, blue-magenta 13, magenta-red 6). Direction
//! `theta = atan2(u_y, u_x)` in `[0, 2 pi)` selects the continuous wheel
//! position `theta / (2 pi) * 55`, interpolating linearly between adjacent
//! entries. So flow pointing right (+x) is pure red `(255, 0, 0)`, and because
//! y grows downward, flow pointing down sits a quarter turn later. Magnitude
//! `r = min(|F| / max_magnitude, 1)` blends from white (`r = 0`) to the full
//! wheel color (`r = 1`): `channel = 1 - r * (1 - wheel)`.

use super::{FlowField, RgbImage};

const RAMPS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const COLOR_WHEEL_LEN: usize = 55;

/// Normalization for flow magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaxMagnitude {
    Fixed(f64),
    /// 99th percentile (nearest rank) of the nonzero magnitudes; 1 for an all-zero field.
    Auto,
}

fn wheel() -> [[f64; 3]; COLOR_WHEEL_LEN] {
    let mut w = [[0.0; 3]; COLOR_WHEEL_LEN];
    let mut i = 0;
    for (seg, &len) in RAMPS.iter().enumerate() {
        for j in 0..len {
            let up = (255 * j / len) as f64 / 255.0;
            let down = 1.0 - up;
            w[i] = match seg {
                0 => [1.0, up, 0.0],
                1 => [down, 1.0, 0.0],
                2 => [0.0, 1.0, up],
                3 => [0.0, down, 1.0],
                4 => [up, 0.0, 1.0],
                _ => [1.0, 0.0, down],
            };
            i += 1;
        }
    }
    w
}

/// Saturated wheel color (channels in `[0, 1]`) for direction angle `theta` radians.
pub fn wheel_color(theta: f64) -> [f64; 3] {
    let w = wheel();
    let turn = (theta / std::f64::consts::TAU).rem_euclid(1.0);
    let pos = turn * COLOR_WHEEL_LEN as f64;
    let k0 = (pos.floor() as usize) % COLOR_WHEEL_LEN;
    let k1 = (k0 + 1) % COLOR_WHEEL_LEN;
    let f = pos - pos.floor();
    std::array::from_fn(|c| (1.0 - f) * w[k0][c] + f * w[k1][c])
}

fn auto_magnitude(field: &FlowField) -> f64 {
    let mut mags: Vec<f64> = field
        .data()
        .iter()
        .map(|v| (v[0] as f64).hypot(v[1] as f64))
        .filter(|&m| m > 0.0)
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((0.99 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1]
}

pub fn flow_to_color(field: &FlowField, max_magnitude: MaxMagnitude) -> RgbImage {
    let max = match max_magnitude {
        MaxMagnitude::Fixed(m) if m > 0.0 => m,
        MaxMagnitude::Fixed(_) => 1.0,
        MaxMagnitude::Auto => auto_magnitude(field),
    };
    let mut data = Vec::with_capacity(3 * field.len());
    for v in field.data() {
        let (ux, uy) = (v[0] as f64, v[1] as f64);
        let r = (ux.hypot(uy) / max).min(1.0);
        if r == 0.0 {
            data.extend_from_slice(&[255, 255, 255]);
            continue;
        }
        // +0.0 folds a negative zero so (m, -0.0) lands on the same hue as (m, 0.0).
        let col = wheel_color((uy + 0.0).atan2(ux));
        for c in col {
            data.push((255.0 * (1.0 - r * (1.0 - c))).round() as u8);
        }
    }
    RgbImage::new(field.width(), field.height(), data).expect("length matches field")
}
