//! Frame-to-frame track propagation from sparse point matches.
//!
//! A [`FeatureMatcher`] supplies point correspondences between consecutive
//! frames (optical flow in a real deployment, synthetic motion in the
//! simulator). Per-object matches feed an affine fit that carries each box
//! forward; matches from the background (outside every track box) feed a
//! homography that models camera motion.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{estimate_affine, estimate_homography, BBox, Homography, PointMatch};

/// Point correspondence source between two frames.
///
/// `Frame` is whatever handle the host system uses for a frame (image buffer,
/// timestamp, world snapshot). For each query point the matcher returns the
/// matched location in the current frame, or `None` where the point was lost.
pub trait FeatureMatcher {
    type Frame;

    fn match_points(
        &mut self,
        prev: &Self::Frame,
        cur: &Self::Frame,
        queries: &[Point2<f64>],
    ) -> Vec<Option<Point2<f64>>>;
}

/// Sampling density for query points inside a box.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    /// Points per 1000 px² of box area.
    pub density: f64,
    /// Lower bound on points per box; an affine fit needs at least 3.
    pub min_points: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            density: 1.0,
            min_points: 9,
        }
    }
}

/// Camera-motion estimate for one frame step. When there were too few
/// background matches (or the fit was degenerate) the homography falls back
/// to identity and `fallback` is set so callers can log the degradation.
#[derive(Debug, Clone, Copy)]
pub struct CameraMotion {
    pub homography: Homography,
    pub fallback: bool,
}

/// Deterministic grid of `max(min_points, round(area*density/1000))` points
/// strictly inside the box, row-major.
pub fn sample_points(bbox: &BBox, spec: &SampleSpec) -> Result<Vec<Point2<f64>>> {
    let area = bbox.area();
    if area <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let wanted = ((area * spec.density / 1000.0).round() as usize).max(spec.min_points);
    let w = bbox.width();
    let h = bbox.height();
    // Grid shape roughly proportional to the box aspect ratio; cells are then
    // trimmed row-major to the exact requested count.
    let rows = ((wanted as f64 * h / w).sqrt().round() as usize).max(1);
    let cols = wanted.div_ceil(rows);
    let mut points = Vec::with_capacity(wanted);
    'fill: for r in 0..rows {
        for c in 0..cols {
            if points.len() == wanted {
                break 'fill;
            }
            points.push(Point2::new(
                bbox.x_tl + (c as f64 + 0.5) * w / cols as f64,
                bbox.y_tl + (r as f64 + 0.5) * h / rows as f64,
            ));
        }
    }
    Ok(points)
}

/// Single-frame box growth/shrink beyond this linear factor is treated as a
/// failed fit: consecutive video frames never scale an object 2×.
const MAX_SCALE_PER_FRAME: f64 = 2.0;

/// Carries a box into the current frame by fitting an affine transform to the
/// point matches and mapping both corners through it.
///
/// Fails with [`Error::DegenerateConfiguration`] on fewer than 3 matches, a
/// collinear configuration, or a physically implausible fit (non-finite
/// output, or a per-frame scale change beyond [`MAX_SCALE_PER_FRAME`] —
/// the signature of a near-degenerate point set amplified by noise); the
/// pipeline then falls back to the Kalman prediction alone.
pub fn propagate_track(bbox: &BBox, matches: &[PointMatch]) -> Result<BBox> {
    let t = estimate_affine(matches)?;
    let tl = t.apply(&bbox.top_left());
    let br = t.apply(&bbox.bottom_right());
    if !(tl.x.is_finite() && tl.y.is_finite() && br.x.is_finite() && br.y.is_finite()) {
        return Err(Error::DegenerateConfiguration(
            "non-finite box propagation",
        ));
    }
    let out = BBox::new(tl.x, tl.y, br.x, br.y);
    let plausible = |before: f64, after: f64| {
        after <= before * MAX_SCALE_PER_FRAME && after >= before / MAX_SCALE_PER_FRAME
    };
    if !plausible(bbox.width(), out.width()) || !plausible(bbox.height(), out.height()) {
        return Err(Error::DegenerateConfiguration(
            "implausible scale change in box propagation",
        ));
    }
    Ok(out)
}

/// Fits the background homography for camera-motion compensation.
/// Best-effort: insufficient or degenerate matches yield the identity with
/// the fallback flag set rather than an error.
pub fn estimate_camera_motion(background_matches: &[PointMatch]) -> CameraMotion {
    if background_matches.len() < 4 {
        return CameraMotion {
            homography: Homography::identity(),
            fallback: true,
        };
    }
    match estimate_homography(background_matches) {
        Ok(h) => CameraMotion {
            homography: h,
            fallback: false,
        },
        Err(_) => CameraMotion {
            homography: Homography::identity(),
            fallback: true,
        },
    }
}

/// Query points for the camera-motion fit: a grid over the full frame with
/// every point inside any track box (dilated by `mask_dilation`) removed.
pub fn background_points(
    frame_w: f64,
    frame_h: f64,
    track_boxes: &[BBox],
    spec: &SampleSpec,
    mask_dilation: f64,
) -> Result<Vec<Point2<f64>>> {
    let frame = BBox::new(0.0, 0.0, frame_w, frame_h);
    let masks: Vec<BBox> = track_boxes.iter().map(|b| b.dilated(mask_dilation)).collect();
    let points = sample_points(&frame, spec)?;
    Ok(points
        .into_iter()
        .filter(|p| !masks.iter().any(|m| m.contains(p)))
        .collect())
}
