//! The 27-dimensional per-frame trajectory feature vector.
//!
//! Feature order is fixed and versioned into every checkpoint so ablation
//! masks stay stable across runs. Finite differences use a one-frame step;
//! boundary frames copy the first defined value of each derivative order.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::preprocess::Window;

pub const NUM_FEATURES: usize = 27;

/// Denominator guard for ratios.
pub const EPS: f64 = 1e-8;
/// Speed threshold below which the motion direction is carried over.
pub const EPS_V: f64 = 1e-6;
/// Trailing horizon (frames) of the path-efficiency feature.
pub const PATH_EFF_HORIZON: usize = 8;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "c_x",
    "c_y",
    "w",
    "h",
    "area",
    "ratio",
    "v_x",
    "v_y",
    "speed",
    "a_x",
    "a_y",
    "acc",
    "sin_theta",
    "cos_theta",
    "jerk",
    "curvature",
    "expansion",
    "ratio_velocity",
    "kinetic",
    "path_efficiency",
    "speed_per_h",
    "speed_per_w",
    "speed_per_area",
    "acc_per_h",
    "acc_per_w",
    "acc_per_area",
    "conf",
];

/// Feature groups in order: State(6), Temporal(10), Geometric(2),
/// Pseudo-physical(2), Perspective-normalized(6), Confidence(1).
pub const FEATURE_GROUPS: [(&str, std::ops::Range<usize>); 6] = [
    ("state", 0..6),
    ("temporal", 6..16),
    ("geometric", 16..18),
    ("pseudo_physical", 18..20),
    ("perspective", 20..26),
    ("confidence", 26..27),
];

/// Keep-mask that removes one named feature group.
pub fn group_mask(group: &str) -> Option<Vec<bool>> {
    let range = FEATURE_GROUPS
        .iter()
        .find(|(name, _)| *name == group)?
        .1
        .clone();
    let mut mask = vec![true; NUM_FEATURES];
    for j in range {
        mask[j] = false;
    }
    Some(mask)
}

/// Copies the first defined value of a derivative into the boundary
/// frames before it.
fn fill_boundary(values: &mut [f64], first_defined: usize) {
    if first_defined >= values.len() {
        for v in values.iter_mut() {
            *v = 0.0;
        }
        return;
    }
    let fill = values[first_defined];
    for v in values[..first_defined].iter_mut() {
        *v = fill;
    }
}

/// Computes the `T x 27` feature matrix for a window of smoothed,
/// normalized boxes.
pub fn compute_features(window: &Window) -> Result<Array2<f64>> {
    let t_len = window.len();
    let cx: Vec<f64> = window.boxes.iter().map(|b| b[0]).collect();
    let cy: Vec<f64> = window.boxes.iter().map(|b| b[1]).collect();
    let w: Vec<f64> = window.boxes.iter().map(|b| b[2]).collect();
    let h: Vec<f64> = window.boxes.iter().map(|b| b[3]).collect();
    let area: Vec<f64> = w.iter().zip(h.iter()).map(|(a, b)| a * b).collect();
    let ratio: Vec<f64> = w.iter().zip(h.iter()).map(|(a, b)| a / (b + EPS)).collect();

    // First differences of the center, defined from t = 1.
    let mut vx = vec![0.0; t_len];
    let mut vy = vec![0.0; t_len];
    for t in 1..t_len {
        vx[t] = cx[t] - cx[t - 1];
        vy[t] = cy[t] - cy[t - 1];
    }
    fill_boundary(&mut vx, 1);
    fill_boundary(&mut vy, 1);

    // Second differences, defined from t = 2 (raw values kept for jerk).
    let mut ax = vec![0.0; t_len];
    let mut ay = vec![0.0; t_len];
    for t in 2..t_len {
        ax[t] = cx[t] - 2.0 * cx[t - 1] + cx[t - 2];
        ay[t] = cy[t] - 2.0 * cy[t - 1] + cy[t - 2];
    }
    let mut jerk = vec![0.0; t_len];
    for t in 3..t_len {
        jerk[t] = ((ax[t] - ax[t - 1]).powi(2) + (ay[t] - ay[t - 1]).powi(2)).sqrt();
    }
    fill_boundary(&mut jerk, 3);
    fill_boundary(&mut ax, 2);
    fill_boundary(&mut ay, 2);

    let speed: Vec<f64> = vx
        .iter()
        .zip(vy.iter())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    let acc: Vec<f64> = ax
        .iter()
        .zip(ay.iter())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();

    // Direction carries over through near-stationary frames.
    let mut sin_t = vec![0.0; t_len];
    let mut cos_t = vec![0.0; t_len];
    let mut dir = (0.0, 1.0);
    for t in 0..t_len {
        if speed[t] >= EPS_V {
            dir = (vy[t] / speed[t], vx[t] / speed[t]);
        }
        sin_t[t] = dir.0;
        cos_t[t] = dir.1;
    }

    let mut curvature = vec![0.0; t_len];
    for t in 0..t_len {
        curvature[t] = (vx[t] * ay[t] - vy[t] * ax[t]).abs() / (speed[t].powi(3) + EPS);
    }

    let mut expansion = vec![0.0; t_len];
    let mut ratio_vel = vec![0.0; t_len];
    for t in 1..t_len {
        expansion[t] = (area[t] - area[t - 1]) / (area[t - 1] + EPS);
        ratio_vel[t] = ratio[t] - ratio[t - 1];
    }
    fill_boundary(&mut expansion, 1);
    fill_boundary(&mut ratio_vel, 1);

    let mut path_eff = vec![1.0; t_len];
    for t in 0..t_len {
        let m = t.min(PATH_EFF_HORIZON);
        if m == 0 {
            continue;
        }
        let net = ((cx[t] - cx[t - m]).powi(2) + (cy[t] - cy[t - m]).powi(2)).sqrt();
        let mut total = 0.0;
        for j in (t - m + 1)..=t {
            total += ((cx[j] - cx[j - 1]).powi(2) + (cy[j] - cy[j - 1]).powi(2)).sqrt();
        }
        path_eff[t] = if total <= EPS { 1.0 } else { net / total };
    }

    let mut out = Array2::zeros((t_len, NUM_FEATURES));
    for t in 0..t_len {
        let kinetic = area[t] * speed[t] * speed[t];
        let row = [
            cx[t],
            cy[t],
            w[t],
            h[t],
            area[t],
            ratio[t],
            vx[t],
            vy[t],
            speed[t],
            ax[t],
            ay[t],
            acc[t],
            sin_t[t],
            cos_t[t],
            jerk[t],
            curvature[t],
            expansion[t],
            ratio_vel[t],
            kinetic,
            path_eff[t],
            speed[t] / (h[t] + EPS),
            speed[t] / (w[t] + EPS),
            speed[t] / (area[t] + EPS),
            acc[t] / (h[t] + EPS),
            acc[t] / (w[t] + EPS),
            acc[t] / (area[t] + EPS),
            window.confidences[t],
        ];
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    feature: FEATURE_NAMES[j].to_string(),
                    frame: t,
                });
            }
            out[[t, j]] = *v;
        }
    }
    Ok(out)
}
