//! From trained model to per-frame anomaly scores: segment scoring with
//! the variant-appropriate likelihood, max-reduction frame aggregation,
//! and optional Gaussian temporal smoothing.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::features::compute_features;
use crate::flow::{FlowModel, Variant, POSE_DIM};
use crate::pose::{combined_score, compute_gate, normalize_pose};
use crate::preprocess::Window;
use crate::track_io::VideoMeta;

/// Anomaly score of one window, with its branch breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScore {
    pub video_id: String,
    pub track_id: u64,
    pub part: u32,
    pub start_frame: usize,
    pub t_len: usize,
    /// Final anomaly score; higher = more anomalous.
    pub score: f64,
    /// Trajectory-only normalized NLL.
    pub traj: f64,
    /// Pose normalized NLL, present only when the gate opened.
    pub pose: Option<f64>,
    pub gate: f64,
}

pub fn score_window(model: &FlowModel, window: &Window) -> Result<SegmentScore> {
    let t_len = window.len();
    let feats = compute_features(window)?;
    let x = model.assemble_input(&feats, window.class_id)?;
    let (ll, z) = model.traj_ll(&x, t_len)?;
    let d_traj = model.traj_width();
    let traj = combined_score(ll, None, 0.0, model.config.lambda, t_len, d_traj, POSE_DIM);

    let (score, pose, gate) = match model.config.variant {
        Variant::T => (traj, None, 0.0),
        Variant::P => {
            let g = compute_gate(window, model.config.person_class).value();
            if g == 0.0 {
                (traj, None, 0.0)
            } else {
                let pw = normalize_pose(window);
                let lp = model.pose_ll(&pw.features, t_len, &z)?;
                let score = combined_score(
                    ll,
                    Some(lp),
                    g,
                    model.config.lambda,
                    t_len,
                    d_traj,
                    POSE_DIM,
                );
                (score, Some(-lp / (t_len as f64 * POSE_DIM as f64)), g)
            }
        }
    };
    Ok(SegmentScore {
        video_id: window.video_id.clone(),
        track_id: window.track_id,
        part: window.part,
        start_frame: window.start_frame,
        t_len,
        score,
        traj,
        pose,
        gate,
    })
}

pub fn score_segments(model: &FlowModel, windows: &[Window]) -> Result<Vec<SegmentScore>> {
    windows.iter().map(|w| score_window(model, w)).collect()
}

/// Per-frame score series of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    /// True where at least one segment covered the frame.
    pub covered: Vec<bool>,
}

/// Max over covering segments per frame; uncovered frames receive the
/// video's minimum covered score, or `global_fill` when nothing covered
/// the video at all.
pub fn aggregate_frames(
    scores: &[SegmentScore],
    meta: &VideoMeta,
    global_fill: f64,
) -> FrameScoreSeries {
    let n = meta.frame_count;
    let mut out = vec![f64::NEG_INFINITY; n];
    let mut covered = vec![false; n];
    for s in scores {
        debug_assert_eq!(s.video_id, meta.video_id);
        let end = (s.start_frame + s.t_len).min(n);
        for f in s.start_frame..end {
            out[f] = out[f].max(s.score);
            covered[f] = true;
        }
    }
    let fill = out
        .iter()
        .zip(covered.iter())
        .filter(|(_, &c)| c)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    let fill = if fill.is_finite() { fill } else { global_fill };
    for (v, &c) in out.iter_mut().zip(covered.iter()) {
        if !c {
            *v = fill;
        }
    }
    FrameScoreSeries {
        video_id: meta.video_id.clone(),
        scores: out,
        covered,
    }
}

/// Aggregates every video in the metadata map (including segment-free
/// ones, filled with the run-wide minimum segment score) and optionally
/// smooths each series with a Gaussian kernel of `sigma` frames.
pub fn aggregate_videos(
    scores: &[SegmentScore],
    metas: &BTreeMap<String, VideoMeta>,
    smooth_sigma: Option<f64>,
) -> Vec<FrameScoreSeries> {
    let global_fill = scores
        .iter()
        .map(|s| s.score)
        .fold(f64::INFINITY, f64::min);
    let global_fill = if global_fill.is_finite() {
        global_fill
    } else {
        0.0
    };
    let mut by_video: BTreeMap<&str, Vec<&SegmentScore>> = BTreeMap::new();
    for s in scores {
        by_video.entry(&s.video_id).or_default().push(s);
    }
    metas
        .values()
        .map(|meta| {
            let segs: Vec<SegmentScore> = by_video
                .get(meta.video_id.as_str())
                .map(|v| v.iter().map(|&s| s.clone()).collect())
                .unwrap_or_default();
            let mut series = aggregate_frames(&segs, meta, global_fill);
            if let Some(sigma) = smooth_sigma {
                series.scores = gaussian_smooth(&series.scores, sigma);
            }
            series
        })
        .collect()
}

/// Truncated (3 sigma) Gaussian smoothing with edge renormalization.
pub fn gaussian_smooth(scores: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || scores.len() < 2 {
        return scores.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let n = scores.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut norm = 0.0;
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        for j in lo..=hi {
            let w = kernel[i.abs_diff(j)];
            acc += w * scores[j];
            norm += w;
        }
        *o = acc / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seg(video: &str, start: usize, score: f64) -> SegmentScore {
        SegmentScore {
            video_id: video.into(),
            track_id: 1,
            part: 0,
            start_frame: start,
            t_len: 16,
            score,
            traj: score,
            pose: None,
            gate: 0.0,
        }
    }

    fn meta(video: &str, frames: usize) -> VideoMeta {
        VideoMeta {
            video_id: video.into(),
            frame_width: 100,
            frame_height: 100,
            frame_count: frames,
            fps: 30.0,
        }
    }

    #[test]
    fn single_segment_fills_its_window_and_beyond() {
        let series = aggregate_frames(&[seg("v", 0, 2.5)], &meta("v", 20), 0.0);
        assert_eq!(series.scores, vec![2.5; 20]);
        assert_eq!(&series.covered[..16], &[true; 16]);
        assert_eq!(&series.covered[16..], &[false; 4]);
    }

    #[test]
    fn overlapping_segments_take_the_max() {
        let series = aggregate_frames(&[seg("v", 0, 1.0), seg("v", 1, 2.0)], &meta("v", 17), 0.0);
        assert_eq!(series.scores[0], 1.0);
        assert_eq!(&series.scores[1..], &[2.0; 16]);
    }

    #[test]
    fn empty_video_uses_the_global_fill() {
        let series = aggregate_frames(&[], &meta("v", 10), -3.0);
        assert_eq!(series.scores, vec![-3.0; 10]);
        assert!(series.covered.iter().all(|&c| !c));
    }

    #[test]
    fn raising_a_segment_never_lowers_any_frame() {
        let base = aggregate_frames(&[seg("v", 0, 1.0), seg("v", 5, 0.5)], &meta("v", 30), 0.0);
        let bumped = aggregate_frames(&[seg("v", 0, 1.0), seg("v", 5, 2.0)], &meta("v", 30), 0.0);
        for (a, b) in base.scores.iter().zip(bumped.scores.iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn segment_order_does_not_matter() {
        let a = vec![seg("v", 0, 1.0), seg("v", 3, 4.0), seg("v", 7, 2.0)];
        let mut b = a.clone();
        b.reverse();
        let m = meta("v", 40);
        assert_eq!(
            aggregate_frames(&a, &m, 0.0),
            aggregate_frames(&b, &m, 0.0)
        );
    }

    #[test]
    fn aggregation_is_idempotent_without_smoothing() {
        let m = meta("v", 25);
        let segs = vec![seg("v", 0, 1.0), seg("v", 4, 3.0)];
        let once = aggregate_frames(&segs, &m, 0.0);
        let twice = aggregate_frames(&segs, &m, 0.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn videos_without_segments_get_run_minimum() {
        let mut metas = BTreeMap::new();
        metas.insert("a".to_string(), meta("a", 18));
        metas.insert("b".to_string(), meta("b", 5));
        let series = aggregate_videos(&[seg("a", 0, 1.5), seg("a", 2, 0.25)], &metas, None);
        assert_eq!(series.len(), 2);
        assert_eq!(series[1].video_id, "b");
        assert_eq!(series[1].scores, vec![0.25; 5]);
    }

    #[test]
    fn smoothing_preserves_constant_series_and_mass_ordering() {
        let flat = gaussian_smooth(&[2.0; 12], 2.0);
        for v in flat {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
        // a single spike spreads but its peak stays at the spike
        let mut spiky = vec![0.0; 21];
        spiky[10] = 1.0;
        let sm = gaussian_smooth(&spiky, 2.0);
        let peak = sm
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 10);
        assert!(sm[10] < 1.0 && sm[8] > 0.0);
    }
}
