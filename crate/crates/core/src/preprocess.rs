//! Track smoothing, windowing, and feature standardization.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::track_io::{Track, TrackPose};

/// Centered moving-average radius for box smoothing (window 2r+1).
pub const DEFAULT_SMOOTH_RADIUS: usize = 2;
/// Columns with a standard deviation below this are treated as constant.
pub const EPS_STD: f64 = 1e-6;

/// A fixed-length slice of one track: the unit scored by the flow.
#[derive(Debug, Clone)]
pub struct Window {
    pub video_id: String,
    pub track_id: u64,
    pub part: u32,
    pub class_id: usize,
    pub start_frame: usize,
    pub boxes: Vec<[f64; 4]>,
    pub confidences: Vec<f64>,
    pub pose: Option<TrackPose>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// True when every frame of the window carries a pose row.
    pub fn has_full_pose(&self) -> bool {
        self.pose
            .as_ref()
            .map(|p| p.present.iter().all(|&x| x))
            .unwrap_or(false)
    }
}

/// Smooths box coordinates with a centered moving average of radius
/// `radius`, shrinking the window at track boundaries. Confidences and
/// pose are left untouched; output coordinates are clamped to [0, 1].
pub fn smooth_track(track: &Track, radius: usize) -> Track {
    let n = track.boxes.len();
    let mut out = track.clone();
    for t in 0..n {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(n - 1);
        let mut acc = [0.0; 4];
        for b in &track.boxes[lo..=hi] {
            for (a, v) in acc.iter_mut().zip(b.iter()) {
                *a += v;
            }
        }
        let count = (hi - lo + 1) as f64;
        for (j, a) in acc.iter().enumerate() {
            out.boxes[t][j] = (a / count).clamp(0.0, 1.0);
        }
    }
    out
}

/// Cuts a track into windows of exactly `t_len` frames at the given
/// stride. Tracks shorter than `t_len` yield no windows.
pub fn segment_track(track: &Track, t_len: usize, stride: usize) -> Vec<Window> {
    assert!(t_len >= 2, "window length must be >= 2");
    assert!(stride >= 1, "stride must be >= 1");
    let n = track.boxes.len();
    if n < t_len {
        return Vec::new();
    }
    let mut windows = Vec::new();
    let mut off = 0;
    while off + t_len <= n {
        let pose = track.pose.as_ref().map(|p| TrackPose {
            keypoints: p.keypoints[off..off + t_len].to_vec(),
            confidences: p.confidences[off..off + t_len].to_vec(),
            present: p.present[off..off + t_len].to_vec(),
        });
        windows.push(Window {
            video_id: track.video_id.clone(),
            track_id: track.track_id,
            part: track.part,
            class_id: track.class_id,
            start_frame: track.start_frame + off,
            boxes: track.boxes[off..off + t_len].to_vec(),
            confidences: track.confidences[off..off + t_len].to_vec(),
            pose,
        });
        off += stride;
    }
    windows
}

/// Per-feature standardization statistics fitted on the training split,
/// plus the ablation mask. Masked columns are dropped on apply.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mask: Vec<bool>,
    /// Columns whose fit-set standard deviation fell below [`EPS_STD`];
    /// their std is replaced by 1.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Column means and population standard deviations of an `N x D`
    /// matrix. Needs at least two rows.
    pub fn fit(features: &Array2<f64>, mask: Vec<bool>) -> Result<Standardizer> {
        let n = features.nrows();
        let d = features.ncols();
        if n < 2 {
            return Err(Error::Invalid(format!(
                "standardizer fit needs at least 2 rows, got {n}"
            )));
        }
        if mask.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mask.len(),
            });
        }
        let mut mean = vec![0.0; d];
        for row in features.rows() {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in features.rows() {
            for (j, v) in row.iter().enumerate() {
                let dlt = v - mean[j];
                var[j] += dlt * dlt;
            }
        }
        let mut std = vec![0.0; d];
        let mut constant = vec![false; d];
        for j in 0..d {
            let s = (var[j] / n as f64).sqrt();
            if s < EPS_STD {
                std[j] = 1.0;
                constant[j] = true;
            } else {
                std[j] = s;
            }
        }
        Ok(Standardizer {
            mean,
            std,
            mask,
            constant,
        })
    }

    /// Identity statistics over `d` columns, all kept. Used when a flow is
    /// trained on already-prepared inputs.
    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            mask: vec![true; d],
            constant: vec![false; d],
        }
    }

    pub fn d_effective(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(x - mean) / std` per kept column; masked columns are dropped.
    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: features.ncols(),
            });
        }
        let kept: Vec<usize> = (0..self.mean.len()).filter(|&j| self.mask[j]).collect();
        let mut out = Array2::zeros((features.nrows(), kept.len()));
        for (t, row) in features.rows().into_iter().enumerate() {
            for (jo, &j) in kept.iter().enumerate() {
                out[[t, jo]] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Default full-dimensional mask.
pub fn full_mask() -> Vec<bool> {
    vec![true; NUM_FEATURES]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn track_with_cx(cx: &[f64]) -> Track {
        Track {
            video_id: "v".into(),
            track_id: 1,
            part: 0,
            class_id: 0,
            start_frame: 0,
            boxes: cx.iter().map(|&c| [c, 0.5, 0.1, 0.2]).collect(),
            confidences: vec![0.9; cx.len()],
            pose: None,
        }
    }

    #[test]
    fn smoothing_is_identity_on_constant_sequences() {
        let t = track_with_cx(&[0.3; 7]);
        let s = smooth_track(&t, 2);
        for (a, b) in s.boxes.iter().zip(t.boxes.iter()) {
            for j in 0..4 {
                assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_leaves_length_one_track_unchanged() {
        let t = track_with_cx(&[0.4]);
        let s = smooth_track(&t, 2);
        assert_eq!(s.boxes, t.boxes);
    }

    #[test]
    fn smoothing_matches_hand_moving_average() {
        // c_x = (0, 1, 0, 1, 0), r = 1 -> (0.5, 1/3, 2/3, 1/3, 0.5)
        let t = track_with_cx(&[0.0, 1.0, 0.0, 1.0, 0.0]);
        let s = smooth_track(&t, 1);
        let got: Vec<f64> = s.boxes.iter().map(|b| b[0]).collect();
        let want = [0.5, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 0.5];
        for (g, w) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(segment_track(&track_with_cx(&[0.1; 15]), 16, 1).len(), 0);
        assert_eq!(segment_track(&track_with_cx(&[0.1; 16]), 16, 1).len(), 1);
        let w = segment_track(&track_with_cx(&[0.1; 20]), 16, 1);
        assert_eq!(w.len(), 5);
        let offsets: Vec<usize> = w.iter().map(|x| x.start_frame).collect();
        assert_eq!(offsets, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn standardizer_degenerate_and_two_point_columns() {
        let f = ndarray::arr2(&[[5.0, 0.0], [5.0, 2.0]]);
        let s = Standardizer::fit(&f, vec![true, true]).unwrap();
        assert_eq!(s.mean, vec![5.0, 1.0]);
        assert!(s.constant[0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
    }

    #[test]
    fn standardizer_rejects_single_row() {
        let f = ndarray::arr2(&[[1.0, 2.0]]);
        assert!(Standardizer::fit(&f, vec![true, true]).is_err());
    }

    #[test]
    fn fit_then_apply_self_consistency() {
        let mut f = Array2::zeros((50, 3));
        for i in 0..50 {
            f[[i, 0]] = (i as f64 * 0.37).sin() * 4.0 + 2.0;
            f[[i, 1]] = (i as f64 * 0.91).cos() * 0.5 - 1.0;
            f[[i, 2]] = i as f64;
        }
        let s = Standardizer::fit(&f, vec![true; 3]).unwrap();
        let z = s.apply(&f).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = z.column(j).to_vec();
            let m: f64 = col.iter().sum::<f64>() / col.len() as f64;
            let v: f64 = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9, "column {j} mean {m}");
            assert!((v.sqrt() - 1.0).abs() < 1e-9, "column {j} std {}", v.sqrt());
        }
    }
}
