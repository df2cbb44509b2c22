//! External file formats: tracks, video metadata, poses, ground-truth
//! labels, per-frame score series, and model checkpoints.

mod checkpoint;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Frames with a gap of at most this many missing frames are linearly
/// interpolated; longer gaps split the track.
pub const GAP_TOLERANCE: usize = 8;
/// Number of pose keypoints (COCO order).
pub const NUM_KEYPOINTS: usize = 17;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One detection exactly as emitted by an upstream tracker, pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub video_id: String,
    pub frame_index: usize,
    pub track_id: u64,
    pub class_id: usize,
    /// (center_x, center_y, width, height) in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub frame_count: usize,
    pub fps: f64,
}

/// Per-frame pose attached to a track, frame-aligned with its boxes.
/// Keypoints are normalized to [0,1] by frame resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPose {
    pub keypoints: Vec<[f64; 2 * NUM_KEYPOINTS]>,
    pub confidences: Vec<[f64; NUM_KEYPOINTS]>,
    pub present: Vec<bool>,
}

impl TrackPose {
    pub fn absent(len: usize) -> Self {
        TrackPose {
            keypoints: vec![[0.0; 2 * NUM_KEYPOINTS]; len],
            confidences: vec![[0.0; NUM_KEYPOINTS]; len],
            present: vec![false; len],
        }
    }
}

/// A contiguous per-instance track with boxes normalized to [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub video_id: String,
    pub track_id: u64,
    /// Split index when a long gap broke the original tracker identity.
    pub part: u32,
    pub class_id: usize,
    pub start_frame: usize,
    pub boxes: Vec<[f64; 4]>,
    pub confidences: Vec<f64>,
    pub pose: Option<TrackPose>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Inclusive frame range.
    pub fn frame_range(&self) -> (usize, usize) {
        (self.start_frame, self.start_frame + self.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    /// One binary label per frame, 1 = anomalous.
    pub labels: Vec<u8>,
    /// Optional human-related evaluation mask.
    pub hr_mask: Option<Vec<u8>>,
}

/// Counters emitted by ingestion; non-fatal issues never abort a parse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub detections: usize,
    pub rejected_boxes: usize,
    pub duplicate_detections: usize,
    pub interpolated_frames: usize,
    pub track_splits: usize,
    pub clamped_pose_confidences: usize,
    pub dropped_pose_rows: usize,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
) -> Result<T> {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing column {name}"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid {name}: {raw:?}"),
    })
}

/// Reads the per-video metadata file, keyed by video id.
pub fn parse_meta(path: &Path) -> Result<BTreeMap<String, VideoMeta>> {
    let mut reader = open_reader(path)?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let meta = VideoMeta {
            video_id: parse_field(&record, 0, "video_id", path)?,
            frame_width: parse_field(&record, 1, "frame_width", path)?,
            frame_height: parse_field(&record, 2, "frame_height", path)?,
            frame_count: parse_field(&record, 3, "frame_count", path)?,
            fps: parse_field(&record, 4, "fps", path)?,
        };
        if meta.frame_width == 0 || meta.frame_height == 0 || meta.frame_count == 0 {
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "frame dimensions and count must be positive".into(),
            });
        }
        out.insert(meta.video_id.clone(), meta);
    }
    Ok(out)
}

/// Parses a track file against its metadata: normalizes boxes by frame
/// resolution, interpolates short gaps, splits tracks at long gaps, and
/// repairs flipped class labels by modal vote.
pub fn parse_tracks(
    track_file: &Path,
    meta_file: &Path,
) -> Result<(Vec<Track>, BTreeMap<String, VideoMeta>, IngestReport)> {
    let meta = parse_meta(meta_file)?;
    let mut report = IngestReport::default();
    let mut reader = open_reader(track_file)?;
    // (video, track) -> frame -> detection
    let mut grouped: BTreeMap<(String, u64), BTreeMap<usize, RawDetection>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: track_file.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let det = RawDetection {
            video_id: parse_field(&record, 0, "video_id", track_file)?,
            frame_index: parse_field(&record, 1, "frame_index", track_file)?,
            track_id: parse_field(&record, 2, "track_id", track_file)?,
            class_id: parse_field(&record, 3, "class_id", track_file)?,
            bbox: [
                parse_field(&record, 4, "cx", track_file)?,
                parse_field(&record, 5, "cy", track_file)?,
                parse_field(&record, 6, "w", track_file)?,
                parse_field(&record, 7, "h", track_file)?,
            ],
            confidence: parse_field(&record, 8, "confidence", track_file)?,
        };
        if !meta.contains_key(&det.video_id) {
            return Err(Error::UnknownVideo(det.video_id));
        }
        report.detections += 1;
        if det.bbox[2] <= 0.0 || det.bbox[3] <= 0.0 {
            report.rejected_boxes += 1;
            continue;
        }
        let by_frame = grouped
            .entry((det.video_id.clone(), det.track_id))
            .or_default();
        if by_frame.contains_key(&det.frame_index) {
            report.duplicate_detections += 1;
            continue;
        }
        by_frame.insert(det.frame_index, det);
    }

    let mut tracks = Vec::new();
    for ((video_id, track_id), by_frame) in grouped {
        let m = &meta[&video_id];
        let (fw, fh) = (f64::from(m.frame_width), f64::from(m.frame_height));
        // split into runs separated by gaps larger than the tolerance
        let frames: Vec<usize> = by_frame.keys().copied().collect();
        let mut runs: Vec<Vec<usize>> = vec![vec![frames[0]]];
        for w in frames.windows(2) {
            if w[1] - w[0] - 1 > GAP_TOLERANCE {
                report.track_splits += 1;
                runs.push(Vec::new());
            }
            runs.last_mut().unwrap().push(w[1]);
        }
        for (part, run) in runs.into_iter().enumerate() {
            let start = run[0];
            let end = *run.last().unwrap();
            let mut boxes = Vec::with_capacity(end - start + 1);
            let mut confs = Vec::with_capacity(end - start + 1);
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            let mut frame = start;
            while frame <= end {
                if let Some(det) = by_frame.get(&frame) {
                    boxes.push([
                        det.bbox[0] / fw,
                        det.bbox[1] / fh,
                        det.bbox[2] / fw,
                        det.bbox[3] / fh,
                    ]);
                    confs.push(det.confidence);
                    *votes.entry(det.class_id).or_default() += 1;
                    frame += 1;
                } else {
                    // gap <= tolerance: interpolate linearly between flanks
                    let prev = frame - 1;
                    let mut next = frame + 1;
                    while !by_frame.contains_key(&next) {
                        next += 1;
                    }
                    let a = by_frame[&prev].bbox;
                    let b = by_frame[&next].bbox;
                    let conf = (by_frame[&prev].confidence + by_frame[&next].confidence) / 2.0;
                    let span = (next - prev) as f64;
                    for g in frame..next {
                        let alpha = (g - prev) as f64 / span;
                        boxes.push([
                            (a[0] + alpha * (b[0] - a[0])) / fw,
                            (a[1] + alpha * (b[1] - a[1])) / fh,
                            (a[2] + alpha * (b[2] - a[2])) / fw,
                            (a[3] + alpha * (b[3] - a[3])) / fh,
                        ]);
                        confs.push(conf);
                        report.interpolated_frames += 1;
                    }
                    frame = next;
                }
            }
            // modal class; ties resolve to the smallest id
            let class_id = votes
                .iter()
                .max_by_key(|(id, count)| (**count, std::cmp::Reverse(**id)))
                .map(|(id, _)| *id)
                .unwrap();
            tracks.push(Track {
                video_id: video_id.clone(),
                track_id,
                part: part as u32,
                class_id,
                start_frame: start,
                boxes: boxes
                    .into_iter()
                    .map(|b| {
                        [
                            b[0].clamp(0.0, 1.0),
                            b[1].clamp(0.0, 1.0),
                            b[2].clamp(0.0, 1.0),
                            b[3].clamp(0.0, 1.0),
                        ]
                    })
                    .collect(),
                confidences: confs,
                pose: None,
            });
        }
    }
    Ok((tracks, meta, report))
}

/// Attaches pose rows to their tracks. Rows referencing a frame outside
/// every matching track part are dropped and counted; keypoint
/// confidences outside [0,1] are clamped and counted.
pub fn parse_pose(
    path: &Path,
    tracks: &mut [Track],
    meta: &BTreeMap<String, VideoMeta>,
    report: &mut IngestReport,
) -> Result<()> {
    let mut index: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    for (i, t) in tracks.iter().enumerate() {
        index
            .entry((t.video_id.clone(), t.track_id))
            .or_default()
            .push(i);
    }
    let mut reader = open_reader(path)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let video_id: String = parse_field(&record, 0, "video_id", path)?;
        let frame_index: usize = parse_field(&record, 1, "frame_index", path)?;
        let track_id: u64 = parse_field(&record, 2, "track_id", path)?;
        let m = meta
            .get(&video_id)
            .ok_or_else(|| Error::UnknownVideo(video_id.clone()))?;
        let (fw, fh) = (f64::from(m.frame_width), f64::from(m.frame_height));
        let mut kp = [0.0; 2 * NUM_KEYPOINTS];
        let mut qs = [0.0; NUM_KEYPOINTS];
        for j in 0..NUM_KEYPOINTS {
            let x: f64 = parse_field(&record, 3 + 3 * j, "keypoint x", path)?;
            let y: f64 = parse_field(&record, 4 + 3 * j, "keypoint y", path)?;
            let mut q: f64 = parse_field(&record, 5 + 3 * j, "keypoint confidence", path)?;
            if !(0.0..=1.0).contains(&q) {
                q = q.clamp(0.0, 1.0);
                report.clamped_pose_confidences += 1;
            }
            kp[2 * j] = x / fw;
            kp[2 * j + 1] = y / fh;
            qs[j] = q;
        }
        let mut attached = false;
        if let Some(candidates) = index.get(&(video_id, track_id)) {
            for &i in candidates {
                let (lo, hi) = tracks[i].frame_range();
                if (lo..=hi).contains(&frame_index) {
                    let len = tracks[i].len();
                    let pose = tracks[i].pose.get_or_insert_with(|| TrackPose::absent(len));
                    let off = frame_index - lo;
                    pose.keypoints[off] = kp;
                    pose.confidences[off] = qs;
                    pose.present[off] = true;
                    attached = true;
                    break;
                }
            }
        }
        if !attached {
            report.dropped_pose_rows += 1;
        }
    }
    Ok(())
}

/// Labels file: one record per video, labels as a binary digit string.
pub fn parse_labels(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut reader = open_reader(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let video_id: String = parse_field(&record, 0, "video_id", path)?;
        let digits: String = parse_field(&record, 1, "labels", path)?;
        let labels = parse_digit_string(&digits, path, line)?;
        let hr_mask = match record.get(2) {
            Some(s) if !s.is_empty() => Some(parse_digit_string(s, path, line)?),
            _ => None,
        };
        out.push(GroundTruth {
            video_id,
            labels,
            hr_mask,
        });
    }
    Ok(out)
}

fn parse_digit_string(s: &str, path: &Path, line: u64) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("label digit must be 0 or 1, got {other:?}"),
            }),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn open_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn wr<W: std::io::Write>(w: &mut csv::Writer<W>, path: &Path, rec: &[String]) -> Result<()> {
    w.write_record(rec).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Canonical float formatting shared by every writer; round-trips f64
/// exactly so identical runs produce byte-identical files.
pub fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_style(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_style(v: f64) -> String {
    // Rust's Display for f64 prints the shortest representation that
    // round-trips, which is what we want.
    format!("{v}")
}

pub fn write_detections(path: &Path, dets: &[RawDetection]) -> Result<()> {
    let mut w = open_writer(path)?;
    wr(
        &mut w,
        path,
        &[
            "video_id".into(),
            "frame_index".into(),
            "track_id".into(),
            "class_id".into(),
            "cx".into(),
            "cy".into(),
            "w".into(),
            "h".into(),
            "confidence".into(),
        ],
    )?;
    for d in dets {
        wr(
            &mut w,
            path,
            &[
                d.video_id.clone(),
                d.frame_index.to_string(),
                d.track_id.to_string(),
                d.class_id.to_string(),
                fmt_f64(d.bbox[0]),
                fmt_f64(d.bbox[1]),
                fmt_f64(d.bbox[2]),
                fmt_f64(d.bbox[3]),
                fmt_f64(d.confidence),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_meta(path: &Path, metas: &[VideoMeta]) -> Result<()> {
    let mut w = open_writer(path)?;
    wr(
        &mut w,
        path,
        &[
            "video_id".into(),
            "frame_width".into(),
            "frame_height".into(),
            "frame_count".into(),
            "fps".into(),
        ],
    )?;
    for m in metas {
        wr(
            &mut w,
            path,
            &[
                m.video_id.clone(),
                m.frame_width.to_string(),
                m.frame_height.to_string(),
                m.frame_count.to_string(),
                fmt_f64(m.fps),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One pose row per (video, frame, track): 17 x (x, y, q) pixel triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRow {
    pub video_id: String,
    pub frame_index: usize,
    pub track_id: u64,
    pub keypoints: [f64; 3 * NUM_KEYPOINTS],
}

pub fn write_pose(path: &Path, rows: &[PoseRow]) -> Result<()> {
    let mut w = open_writer(path)?;
    let mut header = vec!["video_id".to_string(), "frame_index".into(), "track_id".into()];
    for j in 0..NUM_KEYPOINTS {
        header.push(format!("x{j}"));
        header.push(format!("y{j}"));
        header.push(format!("q{j}"));
    }
    wr(&mut w, path, &header)?;
    for r in rows {
        let mut rec = vec![r.video_id.clone(), r.frame_index.to_string(), r.track_id.to_string()];
        rec.extend(r.keypoints.iter().map(|&v| fmt_f64(v)));
        wr(&mut w, path, &rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: &Path, gts: &[GroundTruth]) -> Result<()> {
    let mut w = open_writer(path)?;
    wr(&mut w, path, &["video_id".into(), "labels".into(), "hr".into()])?;
    for g in gts {
        let digits: String = g.labels.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        let hr: String = g
            .hr_mask
            .as_ref()
            .map(|m| m.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect())
            .unwrap_or_default();
        wr(&mut w, path, &[g.video_id.clone(), digits, hr])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A per-frame score row as written to / read from the scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub video_id: String,
    pub frame_index: usize,
    pub score: f64,
    /// Present when the pose variant produced a branch breakdown.
    pub breakdown: Option<(f64, Option<f64>, f64)>, // (traj, pose, gate)
}

/// Deterministic score output, sorted by (video_id, frame_index). The
/// breakdown columns appear only when at least one row carries them.
pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut rows: Vec<&ScoreRow> = rows.iter().collect();
    rows.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
    let with_breakdown = rows.iter().any(|r| r.breakdown.is_some());
    let mut w = open_writer(path)?;
    let mut header = vec!["video_id".to_string(), "frame_index".into(), "score".into()];
    if with_breakdown {
        header.extend(["traj_score".into(), "pose_score".into(), "gate".into()]);
    }
    wr(&mut w, path, &header)?;
    for r in rows {
        let mut rec = vec![r.video_id.clone(), r.frame_index.to_string(), fmt_f64(r.score)];
        if with_breakdown {
            match &r.breakdown {
                Some((traj, pose, gate)) => {
                    rec.push(fmt_f64(*traj));
                    rec.push(pose.map(fmt_f64).unwrap_or_default());
                    rec.push(fmt_f64(*gate));
                }
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        wr(&mut w, path, &rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = open_reader(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let breakdown = match (record.get(3), record.get(4), record.get(5)) {
            (Some(t), Some(p), Some(g)) if !t.is_empty() && !g.is_empty() => {
                let pose = if p.is_empty() {
                    None
                } else {
                    Some(parse_field(&record, 4, "pose_score", path)?)
                };
                Some((
                    parse_field(&record, 3, "traj_score", path)?,
                    pose,
                    parse_field(&record, 5, "gate", path)?,
                ))
            }
            _ => None,
        };
        out.push(ScoreRow {
            video_id: parse_field(&record, 0, "video_id", path)?,
            frame_index: parse_field(&record, 1, "frame_index", path)?,
            score: parse_field(&record, 2, "score", path)?,
            breakdown,
        });
    }
    Ok(out)
}
