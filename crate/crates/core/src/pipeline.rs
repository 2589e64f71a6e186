//! The per-frame tracking loop.
//!
//! Every frame: estimate camera motion from background matches, warp all
//! track states by it, propagate each track with its own point matches, and
//! run the Kalman predict/update cycle with the propagated box as the
//! measurement. Every `detect_every_n`-th frame additionally runs the
//! detector on one scheduled tile, associates the merged detections with the
//! tracks that were observable in that tile, and advances track lifecycle.
//!
//! Detections are the only authority for birth, confirmation, and death;
//! flow propagation is self-confirming and never touches the counters.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::association::{associate, AssociationConfig};
use crate::error::{Error, Result};
use crate::flow::{
    background_points, estimate_camera_motion, propagate_track, sample_points, FeatureMatcher,
    SampleSpec,
};
use nalgebra::Vector4;

use crate::geometry::{iou, BBox, PointMatch};
use crate::kalman::{
    apply_camera_motion, initiate, predict, project, update, update_with_noise, KalmanConfig,
    KalmanState,
};
use crate::scheduler::{
    make_tiles, merge_detections, report_count, select_tile, Detector, SchedulerConfig, TileGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, Copy)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub class_id: u32,
    /// Consecutive detector confirmations.
    pub hits: u32,
    /// Detector slots since the last confirmation (while observable).
    pub misses: u32,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Detector cadence: frames whose index is congruent to `detect_offset`
    /// modulo this value run the detector.
    pub detect_every_n: u64,
    pub detect_offset: u64,
    /// Consecutive detections needed to confirm a tentative track.
    pub confirm_hits: u32,
    /// Detector misses (while observable) before a track is dropped.
    pub max_misses: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub grid_overlap: f64,
    /// Dilation applied to track boxes when masking background points.
    pub mask_dilation: f64,
    /// Fraction of a track's box that must lie inside the scanned tile for
    /// the slot to count as having looked at that track.
    pub min_track_visibility: f64,
    /// Two live same-class tracks above this IOU are duplicates; the weaker
    /// one is dropped.
    pub dedup_iou: f64,
    /// Duplicate test for nested boxes: intersection over the smaller box's
    /// area above this also marks a duplicate.
    pub dedup_containment: f64,
    /// A detection within this many pixels of an interior tile edge is
    /// treated as truncated and never starts a new track.
    pub seam_epsilon: f64,
    /// Measurement noise variance (px^2) applied to flow-derived box
    /// updates. Flow arrives every frame and drifts systematically when the
    /// box overlaps background, so it should generally be trusted less than
    /// detector output (`kalman.r_meas`) or it will hold the covariance
    /// tight around a biased mean and lock real detections out of the gate.
    pub flow_r_meas: f64,
    pub kalman: KalmanConfig,
    pub association: AssociationConfig,
    pub scheduler: SchedulerConfig,
    /// Sampling for per-track flow points.
    pub sample: SampleSpec,
    /// Sampling for camera-motion background points (over the whole frame,
    /// so a lower density than per-box sampling).
    pub background_sample: SampleSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detect_every_n: 3,
            detect_offset: 1,
            confirm_hits: 3,
            max_misses: 30,
            frame_w: 1280,
            frame_h: 720,
            grid_cols: 3,
            grid_rows: 2,
            grid_overlap: 0.25,
            mask_dilation: 0.1,
            min_track_visibility: 0.5,
            dedup_iou: 0.7,
            dedup_containment: 0.9,
            seam_epsilon: 3.0,
            flow_r_meas: 4.0,
            kalman: KalmanConfig::default(),
            association: AssociationConfig::default(),
            scheduler: SchedulerConfig::default(),
            sample: SampleSpec::default(),
            background_sample: SampleSpec {
                density: 0.25,
                min_points: 12,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
    pub class_id: u32,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: u64,
    pub tracks: Vec<TrackOutput>,
    pub detector_ran: bool,
    pub tile_processed: Option<usize>,
    /// True when camera-motion estimation fell back to identity this frame.
    pub camera_fallback: bool,
}

/// Lifecycle step for one track after a detection slot. Counters move only
/// when the detector actually looked where the track was (`detector_ran`);
/// on other frames the track coasts unchanged.
pub fn lifecycle_update(
    track: &Track,
    matched_this_slot: bool,
    detector_ran: bool,
    confirm_hits: u32,
    max_misses: u32,
) -> Track {
    let mut t = *track;
    if !detector_ran || t.status == TrackStatus::Deleted {
        return t;
    }
    if matched_this_slot {
        t.hits += 1;
        t.misses = 0;
        if t.status == TrackStatus::Tentative && t.hits >= confirm_hits {
            t.status = TrackStatus::Confirmed;
        }
    } else {
        t.misses += 1;
        t.hits = 0;
        if t.misses >= max_misses {
            t.status = TrackStatus::Deleted;
        }
    }
    t
}

pub struct TrackerPipeline<F, M, D> {
    cfg: PipelineConfig,
    matcher: M,
    detector: D,
    grid: TileGrid,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
    _frame: PhantomData<F>,
}

impl<F, M, D> TrackerPipeline<F, M, D>
where
    M: FeatureMatcher<Frame = F>,
    D: Detector<Frame = F>,
{
    pub fn new(cfg: PipelineConfig, matcher: M, detector: D) -> Result<Self> {
        let grid = make_tiles(
            cfg.frame_w,
            cfg.frame_h,
            cfg.grid_cols,
            cfg.grid_rows,
            cfg.grid_overlap,
        )?;
        Ok(Self {
            cfg,
            matcher,
            detector,
            grid,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
            _frame: PhantomData,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    fn is_detector_slot(&self, frame_index: u64) -> bool {
        frame_index % self.cfg.detect_every_n
            == self.cfg.detect_offset % self.cfg.detect_every_n
    }

    /// Truncation flags for each box edge, in measurement order
    /// `(x_tl, y_tl, x_br, y_br)`. An edge is truncated when it lies
    /// near-flush against a tile edge that is not also a frame edge — the
    /// signature of an object cut off by the tile window. The tolerance
    /// absorbs detector localization noise, which otherwise hides the
    /// truncation.
    fn censored_edges(&self, b: &BBox, tile: &BBox) -> [bool; 4] {
        let eps = self.cfg.seam_epsilon;
        let flush = |v: f64, edge: f64| (v - edge).abs() <= eps;
        [
            flush(b.x_tl, tile.x_tl) && tile.x_tl > 0.0,
            flush(b.y_tl, tile.y_tl) && tile.y_tl > 0.0,
            flush(b.x_br, tile.x_br) && tile.x_br < self.cfg.frame_w as f64,
            flush(b.y_br, tile.y_br) && tile.y_br < self.cfg.frame_h as f64,
        ]
    }

    /// True when any edge of the box is truncated by an interior tile seam.
    fn clipped_at_interior_seam(&self, b: &BBox, tile: &BBox) -> bool {
        self.censored_edges(b, tile).iter().any(|&c| c)
    }

    /// Drops the weaker of any two live same-class tracks that are duplicate
    /// views of one object: boxes overlapping past `dedup_iou`, or one box
    /// essentially contained in the other (intersection over the smaller
    /// area past `dedup_containment` — IOU alone never flags a fragment
    /// riding inside a full-object track).
    fn dedup_tracks(&mut self) {
        for i in 0..self.tracks.len() {
            for j in (i + 1)..self.tracks.len() {
                let (a, b) = (&self.tracks[i], &self.tracks[j]);
                if a.status == TrackStatus::Deleted
                    || b.status == TrackStatus::Deleted
                    || a.class_id != b.class_id
                {
                    continue;
                }
                let (ba, bb) = (a.state.bbox(), b.state.bbox());
                let min_area = ba.area().min(bb.area());
                let contained =
                    min_area > 0.0 && ba.intersection_area(&bb) / min_area > self.cfg.dedup_containment;
                if contained || iou(&ba, &bb) > self.cfg.dedup_iou {
                    // Confirmed beats tentative, then hit count, then age;
                    // ties fall to the younger (higher) ID.
                    let rank = |t: &Track| {
                        (
                            (t.status == TrackStatus::Confirmed) as u32,
                            t.hits,
                            u64::MAX - t.id,
                        )
                    };
                    let loser = if rank(a) < rank(b) { i } else { j };
                    self.tracks[loser].status = TrackStatus::Deleted;
                }
            }
        }
    }

    /// Advances the tracker by one frame. `prev` and `cur` are consecutive
    /// frame handles; `frame_index` must be strictly increasing.
    pub fn step(&mut self, prev: &F, cur: &F, frame_index: u64) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(Error::OutOfOrderFrame {
                    got: frame_index,
                    last,
                });
            }
        }
        self.last_frame = Some(frame_index);

        // Track boxes in previous-frame coordinates; these anchor both the
        // background mask and the per-track query points.
        let prev_boxes: Vec<BBox> = self.tracks.iter().map(|t| t.state.bbox()).collect();

        // Camera motion from background matches, applied to every state.
        let bg_queries = background_points(
            self.cfg.frame_w as f64,
            self.cfg.frame_h as f64,
            &prev_boxes,
            &self.cfg.background_sample,
            self.cfg.mask_dilation,
        )?;
        let bg_found = self.matcher.match_points(prev, cur, &bg_queries);
        let bg_matches: Vec<PointMatch> = bg_queries
            .iter()
            .zip(&bg_found)
            .filter_map(|(&src, dst)| dst.map(|d| PointMatch::new(src, d)))
            .collect();
        let camera = estimate_camera_motion(&bg_matches);
        if !camera.homography.is_identity(0.0) {
            for track in &mut self.tracks {
                if let Ok(warped) = apply_camera_motion(&track.state, &camera.homography) {
                    track.state = warped;
                }
            }
        }

        // Flow propagation per track, then the Kalman cycle.
        for i in 0..self.tracks.len() {
            let measurement = match sample_points(&prev_boxes[i], &self.cfg.sample) {
                Ok(queries) => {
                    let found = self.matcher.match_points(prev, cur, &queries);
                    let matches: Vec<PointMatch> = queries
                        .iter()
                        .zip(&found)
                        .filter_map(|(&src, dst)| dst.map(|d| PointMatch::new(src, d)))
                        .collect();
                    propagate_track(&prev_boxes[i], &matches).ok()
                }
                Err(_) => None,
            };
            let track = &mut self.tracks[i];
            track.state = predict(&track.state, &self.cfg.kalman);
            if let Some(z) = measurement {
                let flow_cfg = KalmanConfig {
                    r_meas: self.cfg.flow_r_meas,
                    ..self.cfg.kalman
                };
                match update(&track.state, &z, &flow_cfg) {
                    Ok(next) => track.state = next,
                    Err(_) => track.status = TrackStatus::Deleted,
                }
            }
        }

        // Detection slot: scan one tile, associate, advance lifecycle.
        let detector_ran = self.is_detector_slot(frame_index);
        let mut tile_processed = None;
        if detector_ran {
            let tile_idx = select_tile(&mut self.grid, &self.cfg.scheduler);
            tile_processed = Some(tile_idx);
            let tile_rect = self.grid.tiles[tile_idx].rect;
            let raw = self.detector.detect(cur, &tile_rect);
            let detections = merge_detections(&[(tile_rect, raw)], &self.cfg.scheduler);
            report_count(&mut self.grid, tile_idx, detections.len());

            // Only tracks mostly inside the scanned tile can be confirmed or
            // missed by this slot; the rest are out of the detector's view
            // and coast.
            let observable: Vec<usize> = self
                .tracks
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    let b = t.state.bbox();
                    t.status != TrackStatus::Deleted
                        && b.area() > 0.0
                        && b.intersection_area(&tile_rect) / b.area()
                            >= self.cfg.min_track_visibility
                })
                .map(|(i, _)| i)
                .collect();
            let candidates: Vec<_> = observable
                .iter()
                .map(|&i| {
                    let s = &self.tracks[i].state;
                    (project(s, &self.cfg.kalman), s.bbox())
                })
                .collect();
            // A box truncated by a tile seam is geometrically biased: gating
            // it raw would punish the truncation, and updating with it raw
            // would drag the track to the seam. For gating, complete each
            // truncated edge from the best-overlapping candidate's
            // prediction; for the update, keep the raw box but void the
            // truncated coordinates through their noise terms.
            let censored: Vec<[bool; 4]> = detections
                .iter()
                .map(|d| self.censored_edges(&d.bbox, &tile_rect))
                .collect();
            let det_boxes: Vec<BBox> = detections
                .iter()
                .zip(&censored)
                .map(|(d, mask)| {
                    if mask.iter().all(|&c| !c) {
                        return d.bbox;
                    }
                    let best = candidates
                        .iter()
                        .map(|(_, b)| (iou(b, &d.bbox), b))
                        .max_by(|a, b| a.0.total_cmp(&b.0))
                        .filter(|(overlap, _)| *overlap > 0.0);
                    match best {
                        Some((_, pred)) => complete_censored(&d.bbox, mask, pred),
                        None => d.bbox,
                    }
                })
                .collect();
            let assoc = associate(&candidates, &det_boxes, &self.cfg.association);

            let mut matched = vec![false; self.tracks.len()];
            for &(ti, di) in &assoc.matches {
                let idx = observable[ti];
                matched[idx] = true;
                let r = Vector4::from_fn(|i, _| {
                    if censored[di][i] {
                        CENSORED_R
                    } else {
                        self.cfg.kalman.r_meas
                    }
                });
                match update_with_noise(&self.tracks[idx].state, &detections[di].bbox, &r) {
                    Ok(next) => self.tracks[idx].state = next,
                    Err(_) => self.tracks[idx].status = TrackStatus::Deleted,
                }
            }
            for i in 0..self.tracks.len() {
                let in_tile = observable.contains(&i);
                self.tracks[i] = lifecycle_update(
                    &self.tracks[i],
                    matched[i],
                    in_tile,
                    self.cfg.confirm_hits,
                    self.cfg.max_misses,
                );
            }
            for &di in &assoc.unmatched_detections {
                let det = &detections[di];
                // A box flush against an interior tile seam is probably a
                // truncated view of an object the neighbor tile sees whole;
                // never start a track from one.
                if self.clipped_at_interior_seam(&det.bbox, &tile_rect) {
                    continue;
                }
                self.tracks.push(Track {
                    id: self.next_id,
                    state: initiate(&det.bbox, &self.cfg.kalman),
                    class_id: det.class_id,
                    hits: 1,
                    misses: 0,
                    status: if self.cfg.confirm_hits <= 1 {
                        TrackStatus::Confirmed
                    } else {
                        TrackStatus::Tentative
                    },
                });
                self.next_id += 1;
            }

            self.dedup_tracks();
        }

        // Safety net: a state driven wild by degenerate flow or measurements
        // (non-finite, or far larger than the frame) is unrecoverable and
        // would poison the next frame's sampling. A box entirely outside the
        // frame is equally dead weight: no tile can ever observe it, so its
        // miss counter would never advance and it would coast forever.
        let (frame_w, frame_h) = (self.cfg.frame_w, self.cfg.frame_h);
        let frame_rect = BBox::new(0.0, 0.0, f64::from(frame_w), f64::from(frame_h));
        for track in &mut self.tracks {
            let b = track.state.bbox();
            if !box_within_bounds(&b, frame_w, frame_h) || b.intersection_area(&frame_rect) <= 0.0
            {
                track.status = TrackStatus::Deleted;
            }
        }

        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        Ok(FrameResult {
            frame_index,
            tracks: self
                .tracks
                .iter()
                .map(|t| TrackOutput {
                    id: t.id,
                    bbox: t.state.bbox(),
                    class_id: t.class_id,
                    status: t.status,
                })
                .collect(),
            detector_ran,
            tile_processed,
            camera_fallback: camera.fallback,
        })
    }
}

/// Noise variance assigned to a truncated measurement coordinate: large
/// enough that the update ignores the coordinate, small enough to keep the
/// innovation covariance comfortably invertible.
const CENSORED_R: f64 = 1e12;

/// Replaces each truncated coordinate of `det` with the corresponding
/// coordinate of `pred`, reconstructing a plausible full-extent box so
/// overlap and distance gates see the object, not the tile window.
fn complete_censored(det: &BBox, mask: &[bool; 4], pred: &BBox) -> BBox {
    let pick = |c: bool, d: f64, p: f64| if c { p } else { d };
    BBox::new(
        pick(mask[0], det.x_tl, pred.x_tl),
        pick(mask[1], det.y_tl, pred.y_tl),
        pick(mask[2], det.x_br, pred.x_br),
        pick(mask[3], det.y_br, pred.y_br),
    )
}

/// Sanity bound on a live track box: every coordinate finite and neither
/// dimension beyond 4× the frame's larger side. Partially off-screen objects
/// pass easily; diverged estimates do not.
pub fn box_within_bounds(b: &BBox, frame_w: u32, frame_h: u32) -> bool {
    let limit = 4.0 * f64::from(frame_w.max(frame_h));
    b.x_tl.is_finite()
        && b.y_tl.is_finite()
        && b.x_br.is_finite()
        && b.y_br.is_finite()
        && b.width() <= limit
        && b.height() <= limit
}

/// Fixed-point float formatting for the wire protocol: two decimals, with
/// negative zero normalized so identical values always serialize identically.
pub fn fmt2(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    format!("{:.2}", if r == 0.0 { 0.0 } else { r })
}

/// One line of the outbound track stream:
/// `{"frame": n, "detector_ran": b, "tracks": [{"id": n, "tlbr": [..], "class": n, "status": s}]}`.
/// Hand-assembled so field order and float width are stable byte-for-byte.
pub fn frame_result_jsonl(r: &FrameResult) -> String {
    let mut line = format!(
        "{{\"frame\": {}, \"detector_ran\": {}, \"tracks\": [",
        r.frame_index, r.detector_ran
    );
    for (i, t) in r.tracks.iter().enumerate() {
        if i > 0 {
            line.push_str(", ");
        }
        let status = match t.status {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Deleted => "deleted",
        };
        line.push_str(&format!(
            "{{\"id\": {}, \"tlbr\": [{}, {}, {}, {}], \"class\": {}, \"status\": \"{}\"}}",
            t.id,
            fmt2(t.bbox.x_tl),
            fmt2(t.bbox.y_tl),
            fmt2(t.bbox.x_br),
            fmt2(t.bbox.y_br),
            t.class_id,
            status
        ));
    }
    line.push_str("]}");
    line
}
