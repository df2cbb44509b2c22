//! Deterministic synthetic scene generator: normal multi-class tracks
//! with smooth constant-velocity motion, plus a catalogue of injected
//! anomalies with exact frame labels, optional synthetic poses, and a
//! human-related evaluation mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::track_io::{GroundTruth, PoseRow, RawDetection, VideoMeta, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnomalyKind {
    /// Speed multiplied by the factor during the anomalous interval.
    SpeedSpike(f64),
    /// Direction-change noise blown up during the interval.
    Erratic,
    /// Box dimensions doubled during the interval.
    ScaleBurst,
    /// A track of an out-of-distribution class present only during the
    /// interval.
    WrongClass,
    /// Detector and keypoint confidences collapse during the interval.
    ConfidenceCollapse,
}

impl std::str::FromStr for AnomalyKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "speed-spike" => Ok(AnomalyKind::SpeedSpike(4.0)),
            "erratic" => Ok(AnomalyKind::Erratic),
            "scale-burst" => Ok(AnomalyKind::ScaleBurst),
            "wrong-class" => Ok(AnomalyKind::WrongClass),
            "confidence-collapse" => Ok(AnomalyKind::ConfidenceCollapse),
            other => Err(format!("unknown anomaly kind {other:?}")),
        }
    }
}

pub fn default_catalogue() -> Vec<AnomalyKind> {
    vec![
        AnomalyKind::SpeedSpike(4.0),
        AnomalyKind::Erratic,
        AnomalyKind::ScaleBurst,
        AnomalyKind::WrongClass,
        AnomalyKind::ConfidenceCollapse,
    ]
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub videos: usize,
    pub frames: usize,
    pub objects: usize,
    /// Person / bicycle / car proportions; must sum to 1.
    pub class_mix: [f64; 3],
    /// Normalized units per frame.
    pub speed_range: (f64, f64),
    /// Std of the per-frame heading change (radians).
    pub turn_std: f64,
    /// Std of the multiplicative per-frame box-scale random walk.
    pub scale_drift_std: f64,
    pub conf_mean: f64,
    pub conf_std: f64,
    /// Fraction of objects per video carrying an anomaly.
    pub anomaly_rate: f64,
    pub anomalies: Vec<AnomalyKind>,
    pub with_pose: bool,
    pub video_prefix: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub fps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            videos: 4,
            frames: 160,
            objects: 3,
            class_mix: [0.7, 0.3, 0.0],
            speed_range: (0.002, 0.006),
            turn_std: 0.03,
            scale_drift_std: 0.004,
            conf_mean: 0.9,
            conf_std: 0.04,
            anomaly_rate: 0.0,
            anomalies: default_catalogue(),
            with_pose: false,
            video_prefix: "synth".into(),
            frame_width: 856,
            frame_height: 480,
            fps: 24.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::Invalid("class mix must be proportions summing to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::Invalid("anomaly rate must lie in [0, 1]".into()));
        }
        if self.anomaly_rate > 0.0 && self.anomalies.is_empty() {
            return Err(Error::Invalid("anomaly rate > 0 needs a catalogue".into()));
        }
        if self.videos == 0 || self.frames < 4 || self.objects == 0 {
            return Err(Error::Invalid("scenario must have videos, frames and objects".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub detections: Vec<RawDetection>,
    pub metas: Vec<VideoMeta>,
    pub ground_truth: Vec<GroundTruth>,
    pub poses: Vec<PoseRow>,
}

/// Base (width, height) in normalized units per class.
fn base_size(class_id: usize) -> (f64, f64) {
    match class_id {
        0 => (0.05, 0.12),
        1 => (0.08, 0.10),
        _ => (0.14, 0.09),
    }
}

/// Keypoint template as (x, y) offsets in box fractions, COCO order.
const POSE_TEMPLATE: [(f64, f64); NUM_KEYPOINTS] = [
    (0.00, -0.45),
    (-0.05, -0.48),
    (0.05, -0.48),
    (-0.09, -0.45),
    (0.09, -0.45),
    (-0.18, -0.30),
    (0.18, -0.30),
    (-0.22, -0.10),
    (0.22, -0.10),
    (-0.24, 0.05),
    (0.24, 0.05),
    (-0.12, 0.00),
    (0.12, 0.00),
    (-0.13, 0.25),
    (0.13, 0.25),
    (-0.14, 0.45),
    (0.14, 0.45),
];

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn generate(cfg: &ScenarioConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut out = SynthOutput {
        detections: Vec::new(),
        metas: Vec::new(),
        ground_truth: Vec::new(),
        poses: Vec::new(),
    };
    let (fw, fh) = (f64::from(cfg.frame_width), f64::from(cfg.frame_height));
    let n_anom = (cfg.anomaly_rate * cfg.objects as f64).round() as usize;
    let interval = (cfg.frames / 3, 2 * cfg.frames / 3);

    for v in 0..cfg.videos {
        let video_id = format!("{}{:03}", cfg.video_prefix, v);
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(v as u64),
        );
        let mut labels = vec![0u8; cfg.frames];
        let mut person_anom = vec![false; cfg.frames];
        let mut other_anom = vec![false; cfg.frames];

        for o in 0..cfg.objects {
            let kind = if o < n_anom {
                Some(cfg.anomalies[(v + o) % cfg.anomalies.len()])
            } else {
                None
            };
            let u: f64 = rng.gen_range(0.0..1.0);
            let class_id = if matches!(kind, Some(AnomalyKind::WrongClass)) {
                2
            } else if u < cfg.class_mix[0] {
                0
            } else if u < cfg.class_mix[0] + cfg.class_mix[1] {
                1
            } else {
                2
            };
            let (span_lo, span_hi) = if matches!(kind, Some(AnomalyKind::WrongClass)) {
                interval
            } else {
                (0, cfg.frames)
            };

            let mut x = rng.gen_range(0.25..0.75);
            let mut y = rng.gen_range(0.3..0.7);
            let mut theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let speed = rng.gen_range(cfg.speed_range.0..cfg.speed_range.1);
            let mut drift = 1.0;
            let (bw0, bh0) = base_size(class_id);

            for frame in span_lo..span_hi {
                let in_interval = frame >= interval.0 && frame < interval.1;
                let active = kind.is_some()
                    && (matches!(kind, Some(AnomalyKind::WrongClass)) || in_interval);

                let turn_scale = if active && matches!(kind, Some(AnomalyKind::Erratic)) {
                    18.0
                } else {
                    1.0
                };
                theta += cfg.turn_std * turn_scale * normal(&mut rng);
                let v_eff = match kind {
                    Some(AnomalyKind::SpeedSpike(k)) if active => speed * k,
                    _ => speed,
                };
                x += v_eff * theta.cos();
                y += v_eff * theta.sin();
                if !(0.18..=0.82).contains(&x) {
                    theta = std::f64::consts::PI - theta;
                    x = x.clamp(0.18, 0.82);
                }
                if !(0.22..=0.78).contains(&y) {
                    theta = -theta;
                    y = y.clamp(0.22, 0.78);
                }

                drift = (drift * (1.0 + cfg.scale_drift_std * normal(&mut rng))).clamp(0.75, 1.3);
                let persp = 0.75 + 0.5 * y;
                let burst = if active && matches!(kind, Some(AnomalyKind::ScaleBurst)) {
                    2.0
                } else {
                    1.0
                };
                let bw = bw0 * drift * persp * burst;
                let bh = bh0 * drift * persp * burst;
                let cx = x.clamp(bw / 2.0 + 1e-3, 1.0 - bw / 2.0 - 1e-3);
                let cy = y.clamp(bh / 2.0 + 1e-3, 1.0 - bh / 2.0 - 1e-3);

                let collapse = active && matches!(kind, Some(AnomalyKind::ConfidenceCollapse));
                let conf_noise = normal(&mut rng);
                let confidence = if collapse {
                    (0.1 + 0.03 * conf_noise).clamp(0.01, 0.3)
                } else {
                    (cfg.conf_mean + cfg.conf_std * conf_noise).clamp(0.05, 1.0)
                };

                if active {
                    labels[frame] = 1;
                    if class_id == 0 {
                        person_anom[frame] = true;
                    } else {
                        other_anom[frame] = true;
                    }
                }

                out.detections.push(RawDetection {
                    video_id: video_id.clone(),
                    frame_index: frame,
                    track_id: o as u64 + 1,
                    class_id,
                    bbox: [cx * fw, cy * fh, bw * fw, bh * fh],
                    confidence,
                });

                if cfg.with_pose && class_id == 0 {
                    let mut kps = [0.0; 3 * NUM_KEYPOINTS];
                    for (j, (tx, ty)) in POSE_TEMPLATE.iter().enumerate() {
                        let jx = 0.01 * bh * normal(&mut rng);
                        let jy = 0.01 * bh * normal(&mut rng);
                        kps[3 * j] = (cx + tx * bw + jx) * fw;
                        kps[3 * j + 1] = (cy + ty * bh + jy) * fh;
                        let qn = normal(&mut rng);
                        kps[3 * j + 2] = if collapse {
                            (0.15 + 0.05 * qn).clamp(0.01, 1.0)
                        } else {
                            (0.92 + 0.04 * qn).clamp(0.0, 1.0)
                        };
                    }
                    out.poses.push(PoseRow {
                        video_id: video_id.clone(),
                        frame_index: frame,
                        track_id: o as u64 + 1,
                        keypoints: kps,
                    });
                }
            }
        }

        out.metas.push(VideoMeta {
            video_id: video_id.clone(),
            frame_width: cfg.frame_width,
            frame_height: cfg.frame_height,
            frame_count: cfg.frames,
            fps: cfg.fps,
        });
        let hr_mask = (0..cfg.frames)
            .map(|f| u8::from(!(other_anom[f] && !person_anom[f])))
            .collect();
        out.ground_truth.push(GroundTruth {
            video_id,
            labels,
            hr_mask: Some(hr_mask),
        });
    }
    Ok(out)
}

/// Writes the four standard files into a directory.
pub fn write_scenario(out: &SynthOutput, dir: &std::path::Path) -> Result<()> {
    crate::track_io::write_detections(&dir.join("tracks.csv"), &out.detections)?;
    crate::track_io::write_meta(&dir.join("meta.csv"), &out.metas)?;
    crate::track_io::write_labels(&dir.join("labels.csv"), &out.ground_truth)?;
    crate::track_io::write_pose(&dir.join("pose.csv"), &out.poses)?;
    Ok(())
}
