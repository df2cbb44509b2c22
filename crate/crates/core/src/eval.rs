//! Micro-averaged frame-level AUROC and average precision, with optional
//! human-related subset filtering. Both metrics use exact tie handling:
//! AUROC counts tied positive/negative pairs as half a win, AP sweeps
//! descending scores processing each tie group as one block.

use crate::error::{Error, Result};
use crate::scoring::FrameScoreSeries;
use crate::track_io::GroundTruth;

fn validate(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("metric scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid(format!(
            "metric needs both classes, got {pos} positives / {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Sorted index groups of equal score, ascending.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last() {
            Some(g) if scores[g[0]] == scores[i] => groups.last_mut().unwrap().push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties
/// counted half. Computed with integer pair counting, so it agrees with a
/// brute-force all-pairs count bit for bit.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = validate(scores, labels)?;
    let mut wins2: u128 = 0; // in half-win units
    let mut neg_below: u128 = 0;
    for group in tie_groups(scores).iter() {
        let gp = group.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let gn = group.len() as u128 - gp;
        wins2 += gp * (2 * neg_below + gn);
        neg_below += gn;
    }
    Ok(wins2 as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Area under the precision-recall curve by descending-score sweep;
/// precision is evaluated after each whole tie group.
pub fn ap(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = validate(scores, labels)?;
    let mut sum = 0.0;
    let mut tp = 0usize;
    let mut total = 0usize;
    for group in tie_groups(scores).iter().rev() {
        let gp = group.iter().filter(|&&i| labels[i] == 1).count();
        tp += gp;
        total += group.len();
        if gp > 0 {
            sum += gp as f64 * (tp as f64 / total as f64);
        }
    }
    Ok(sum / pos as f64)
}

/// Keeps only the frames whose mask is 1, preserving order.
pub fn filter_hr(scores: &[f64], labels: &[u8], hr_mask: &[u8]) -> Result<(Vec<f64>, Vec<u8>)> {
    if scores.len() != hr_mask.len() || labels.len() != hr_mask.len() {
        return Err(Error::DimensionMismatch {
            expected: hr_mask.len(),
            got: scores.len(),
        });
    }
    let mut s = Vec::new();
    let mut l = Vec::new();
    for i in 0..scores.len() {
        if hr_mask[i] == 1 {
            s.push(scores[i]);
            l.push(labels[i]);
        }
    }
    if s.is_empty() {
        return Err(Error::Invalid("human-related mask keeps no frames".into()));
    }
    Ok((s, l))
}

/// Frame scores and labels concatenated over all videos in ground-truth
/// order (micro-averaging). The mask is present only when every video
/// carries one.
pub struct ConcatFrames {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub hr_mask: Option<Vec<u8>>,
}

pub fn concat_frames(series: &[FrameScoreSeries], gts: &[GroundTruth]) -> Result<ConcatFrames> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut hr = Some(Vec::new());
    for gt in gts {
        let s = series
            .iter()
            .find(|s| s.video_id == gt.video_id)
            .ok_or_else(|| Error::UnknownVideo(gt.video_id.clone()))?;
        if s.scores.len() != gt.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: gt.labels.len(),
                got: s.scores.len(),
            });
        }
        scores.extend_from_slice(&s.scores);
        labels.extend_from_slice(&gt.labels);
        match (&mut hr, &gt.hr_mask) {
            (Some(acc), Some(m)) => {
                if m.len() != gt.labels.len() {
                    return Err(Error::DimensionMismatch {
                        expected: gt.labels.len(),
                        got: m.len(),
                    });
                }
                acc.extend_from_slice(m);
            }
            _ => hr = None,
        }
    }
    Ok(ConcatFrames {
        scores,
        labels,
        hr_mask: hr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub ap: f64,
    pub frames: usize,
    pub positives: usize,
    /// Metrics restricted to the human-related subset, when masked.
    pub hr: Option<(f64, f64)>,
}

pub fn evaluate(frames: &ConcatFrames) -> Result<EvalReport> {
    let auroc_v = auroc(&frames.scores, &frames.labels)?;
    let ap_v = ap(&frames.scores, &frames.labels)?;
    let hr = match &frames.hr_mask {
        Some(mask) => {
            let (s, l) = filter_hr(&frames.scores, &frames.labels, mask)?;
            Some((auroc(&s, &l)?, ap(&s, &l)?))
        }
        None => None,
    };
    Ok(EvalReport {
        auroc: auroc_v,
        ap: ap_v,
        frames: frames.scores.len(),
        positives: frames.labels.iter().filter(|&&l| l == 1).count(),
        hr,
    })
}

impl EvalReport {
    /// Machine-readable key=value block.
    pub fn key_values(&self) -> String {
        let mut out = format!(
            "frames={}\npositives={}\nauroc={}\nap={}\n",
            self.frames,
            self.positives,
            crate::track_io::fmt_f64(self.auroc),
            crate::track_io::fmt_f64(self.ap)
        );
        if let Some((a, p)) = self.hr {
            out.push_str(&format!(
                "hr_auroc={}\nhr_ap={}\n",
                crate::track_io::fmt_f64(a),
                crate::track_io::fmt_f64(p)
            ));
        }
        out
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>10} {:>10}\n",
            "subset", "AUROC", "AP"
        ));
        out.push_str(&format!(
            "{:<10} {:>10.4} {:>10.4}\n",
            "overall", self.auroc, self.ap
        ));
        if let Some((a, p)) = self.hr {
            out.push_str(&format!("{:<10} {:>10.4} {:>10.4}\n", "hr", a, p));
        }
        out
    }
}
