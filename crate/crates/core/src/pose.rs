//! Pose branch support: pelvis-normalized keypoint windows, the
//! reliability gate, and the combined trajectory + pose score.

use crate::features::EPS;
use crate::flow::POSE_DIM;
use crate::preprocess::Window;
use crate::track_io::NUM_KEYPOINTS;

/// COCO hip keypoint indices; their midpoint is the pelvis.
pub const HIP_LEFT: usize = 11;
pub const HIP_RIGHT: usize = 12;

/// Pelvis-centered, box-height-scaled keypoints for one window.
#[derive(Debug, Clone)]
pub struct PoseWindow {
    /// Row-major `t_len x POSE_DIM` normalized keypoints; pose-absent
    /// frames are zero-filled.
    pub features: Vec<f64>,
    pub present: Vec<bool>,
    /// Mean keypoint confidence over present frames (0 when none).
    pub q_bar: f64,
    pub t_len: usize,
}

/// Centers every keypoint on the hip midpoint and scales by the frame's
/// box height, making the representation invariant to image position and
/// (jointly with the box) to subject scale.
pub fn normalize_pose(window: &Window) -> PoseWindow {
    let t_len = window.len();
    let mut features = vec![0.0; t_len * POSE_DIM];
    let mut present = vec![false; t_len];
    let mut q_sum = 0.0;
    let mut q_count = 0usize;
    if let Some(pose) = &window.pose {
        for t in 0..t_len {
            if !pose.present[t] {
                continue;
            }
            present[t] = true;
            let kp = &pose.keypoints[t];
            let px = (kp[2 * HIP_LEFT] + kp[2 * HIP_RIGHT]) / 2.0;
            let py = (kp[2 * HIP_LEFT + 1] + kp[2 * HIP_RIGHT + 1]) / 2.0;
            let scale = window.boxes[t][3] + EPS;
            let row = &mut features[t * POSE_DIM..(t + 1) * POSE_DIM];
            for j in 0..NUM_KEYPOINTS {
                row[2 * j] = (kp[2 * j] - px) / scale;
                row[2 * j + 1] = (kp[2 * j + 1] - py) / scale;
            }
            q_sum += pose.confidences[t].iter().sum::<f64>();
            q_count += NUM_KEYPOINTS;
        }
    }
    let q_bar = if q_count > 0 {
        q_sum / q_count as f64
    } else {
        0.0
    };
    PoseWindow {
        features,
        present,
        q_bar,
        t_len,
    }
}

/// Scalar reliability gate `g = g_cls * g_valid * q_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    /// Window belongs to the person class.
    pub g_cls: bool,
    /// Every frame of the window carries a pose row.
    pub g_valid: bool,
    pub q_bar: f64,
}

impl Gate {
    pub fn value(&self) -> f64 {
        if self.g_cls && self.g_valid {
            self.q_bar
        } else {
            0.0
        }
    }
}

pub fn compute_gate(window: &Window, person_class: usize) -> Gate {
    let g_cls = window.class_id == person_class;
    let g_valid = window.has_full_pose();
    let q_bar = if g_cls && g_valid {
        normalize_pose(window).q_bar
    } else {
        0.0
    };
    Gate {
        g_cls,
        g_valid,
        q_bar,
    }
}

/// Dimensionality-normalized joint anomaly score
/// `-(ll_traj + lambda * g * ll_pose) / (T * (d_traj + d_pose * g))`.
/// With `g = 0` this is exactly the trajectory-only score, bit for bit.
pub fn combined_score(
    ll_traj: f64,
    ll_pose: Option<f64>,
    g: f64,
    lambda: f64,
    t_len: usize,
    d_traj: usize,
    d_pose: usize,
) -> f64 {
    if g == 0.0 {
        return -ll_traj / (t_len as f64 * d_traj as f64);
    }
    let lp = ll_pose.expect("gated segment must carry a pose log-likelihood");
    -(ll_traj + lambda * g * lp) / (t_len as f64 * (d_traj as f64 + d_pose as f64 * g))
}
