//! Tracking-quality metrics computed from the serialized artifact streams:
//! per-frame IOU against ground truth, the fraction of camera-phase frames
//! at IOU ≥ 0.5, and identity-switch counting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use tembo_core::geometry::{iou, BBox};

#[derive(Debug, Deserialize)]
struct TrackLine {
    frame: u64,
    tracks: Vec<TrackEntry>,
}

#[derive(Debug, Deserialize)]
struct TrackEntry {
    id: u64,
    tlbr: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct GtLine {
    frame: u64,
    visible: bool,
    phase: String,
    tlbr: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrackingMetrics {
    /// Frames included in the evaluation: ground truth visible during the
    /// Track or Herd phase.
    pub frames_evaluated: u64,
    pub mean_iou: f64,
    /// Fraction of evaluated frames with best-track IOU ≥ 0.5.
    pub iou_ge_05_fraction: f64,
    /// Times the ground-truth object changed its matched track id.
    pub id_switches: u64,
}

fn bbox(tlbr: &[f64; 4]) -> BBox {
    BBox::new(tlbr[0], tlbr[1], tlbr[2], tlbr[3])
}

fn parse_lines<'a, T: Deserialize<'a>>(text: &'a str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| SimError::Config(format!("{what} line {}: {e}", i + 1)))
        })
        .collect()
}

/// Compares a track stream against a ground-truth stream.
///
/// Every track frame must exist in the ground truth (`Misaligned`
/// otherwise); ground-truth frames with no track line count as misses. A
/// frame's match is the track with the highest IOU when that IOU is ≥ 0.5;
/// an id switch is counted whenever the match differs from the previous
/// matched id.
pub fn evaluate_tracking(tracks_text: &str, gt_text: &str) -> Result<TrackingMetrics> {
    let gt_lines: Vec<GtLine> = parse_lines(gt_text, "ground truth")?;
    let track_lines: Vec<TrackLine> = parse_lines(tracks_text, "tracks")?;

    let gt_by_frame: BTreeMap<u64, &GtLine> = gt_lines.iter().map(|g| (g.frame, g)).collect();
    let mut tracks_by_frame: BTreeMap<u64, &TrackLine> = BTreeMap::new();
    for line in &track_lines {
        if !gt_by_frame.contains_key(&line.frame) {
            return Err(SimError::Misaligned { frame: line.frame });
        }
        tracks_by_frame.insert(line.frame, line);
    }

    let mut evaluated = 0u64;
    let mut iou_sum = 0.0;
    let mut hits = 0u64;
    let mut switches = 0u64;
    let mut last_matched: Option<u64> = None;

    for (frame, gt) in &gt_by_frame {
        let in_camera_phase = gt.phase == "Track" || gt.phase == "Herd";
        let Some(gt_box) = gt.tlbr.as_ref().map(bbox) else {
            continue;
        };
        if !gt.visible || !in_camera_phase {
            continue;
        }
        evaluated += 1;

        let best = tracks_by_frame
            .get(frame)
            .into_iter()
            .flat_map(|l| l.tracks.iter())
            .map(|t| (iou(&bbox(&t.tlbr), &gt_box), t.id))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));

        let (best_iou, best_id) = best.unwrap_or((0.0, 0));
        iou_sum += best_iou;
        if best_iou >= 0.5 {
            hits += 1;
            if let Some(prev) = last_matched {
                if prev != best_id {
                    switches += 1;
                }
            }
            last_matched = Some(best_id);
        }
    }

    Ok(TrackingMetrics {
        frames_evaluated: evaluated,
        mean_iou: if evaluated == 0 {
            0.0
        } else {
            iou_sum / evaluated as f64
        },
        iou_ge_05_fraction: if evaluated == 0 {
            0.0
        } else {
            hits as f64 / evaluated as f64
        },
        id_switches: switches,
    })
}
