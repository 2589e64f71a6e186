//! Synthetic sensing: detector and feature-matcher stand-ins driven by the
//! simulated world's ground truth plus configurable noise.
//!
//! All randomness is drawn from counter-keyed ChaCha substreams of the
//! scenario seed, one per (frame, tile, purpose). Results therefore do not
//! depend on evaluation order, and a re-run with the same configuration is
//! bit-identical.

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::camera::{CamPose, CameraModel};
use tembo_core::flow::FeatureMatcher;
use tembo_core::geometry::{AffineTransform, BBox, Homography, PointMatch};
use tembo_core::scheduler::{Detection, Detector};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that a visible object produces no detection.
    pub det_miss_prob: f64,
    /// Expected false positives per scanned tile (Poisson rate).
    pub det_fp_rate: f64,
    /// Std-dev of Gaussian jitter added to each detection corner (px).
    pub det_jitter_sigma: f64,
    /// Std-dev of Gaussian error on each matched point coordinate (px).
    pub flow_noise_sigma: f64,
    /// Probability that a query point finds no match.
    pub flow_drop_prob: f64,
    /// Minimum fraction of an object inside the tile for it to be
    /// detectable at all (stand-ins for partial views the net would miss).
    pub det_min_visibility: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            det_miss_prob: 0.05,
            det_fp_rate: 0.05,
            det_jitter_sigma: 1.0,
            flow_noise_sigma: 0.3,
            flow_drop_prob: 0.02,
            det_min_visibility: 0.5,
        }
    }
}

impl NoiseConfig {
    /// All sensing perfect; useful as a test baseline.
    pub fn zero() -> Self {
        Self {
            det_miss_prob: 0.0,
            det_fp_rate: 0.0,
            det_jitter_sigma: 0.0,
            flow_noise_sigma: 0.0,
            flow_drop_prob: 0.0,
            det_min_visibility: 0.5,
        }
    }

    fn detector_noise_free(&self) -> bool {
        self.det_miss_prob == 0.0 && self.det_fp_rate == 0.0 && self.det_jitter_sigma == 0.0
    }
}

pub const PURPOSE_DETECT: u64 = 1;
pub const PURPOSE_FLOW: u64 = 2;

/// Deterministic substream: the ChaCha key is built from the scenario seed
/// and the (frame, tile, purpose) counters, so every consumer gets its own
/// independent stream regardless of call order.
pub fn stream_rng(seed: u64, frame: u64, tile_key: u64, purpose: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&frame.to_le_bytes());
    key[16..24].copy_from_slice(&tile_key.to_le_bytes());
    key[24..32].copy_from_slice(&purpose.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn tile_key(tile: &BBox) -> u64 {
    let x = tile.x_tl.round() as i64 as u64;
    let y = tile.y_tl.round() as i64 as u64;
    (x << 32) ^ (y & 0xffff_ffff)
}

/// One rendered simulator frame as seen by the tracker: camera pose plus the
/// ground-truth box (frame coordinates) when the elephant is visible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimFrame {
    pub index: u64,
    pub pose: CamPose,
    pub gt_box: Option<BBox>,
    pub visible: bool,
}

/// Ground-truth point motion for synthetic matches.
#[derive(Debug, Clone)]
pub enum MotionModel {
    Affine(AffineTransform),
    Homography(Homography),
}

impl MotionModel {
    fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        match self {
            MotionModel::Affine(a) => Some(a.apply(p)),
            MotionModel::Homography(h) => h.apply(p).ok(),
        }
    }
}

/// Applies a known motion to query points with flow noise: each point is
/// dropped with `flow_drop_prob`, survivors get N(0, flow_noise_sigma) added
/// to each destination coordinate.
pub fn synth_matches(
    queries: &[Point2<f64>],
    motion: &MotionModel,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Vec<PointMatch> {
    let normal = gaussian(noise.flow_noise_sigma);
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        if rng.gen::<f64>() < noise.flow_drop_prob {
            continue;
        }
        let Some(mut dst) = motion.apply(q) else {
            continue;
        };
        if let Some(n) = &normal {
            dst.x += n.sample(rng);
            dst.y += n.sample(rng);
        }
        out.push(PointMatch::new(*q, dst));
    }
    out
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated non-negative"))
}

/// Corner-to-corner affine between two axis-aligned boxes.
fn box_affine(from: &BBox, to: &BBox) -> Option<AffineTransform> {
    if from.width() <= 0.0 || from.height() <= 0.0 {
        return None;
    }
    let sx = to.width() / from.width();
    let sy = to.height() / from.height();
    let tx = to.x_tl - sx * from.x_tl;
    let ty = to.y_tl - sy * from.y_tl;
    Some(AffineTransform::new(
        nalgebra::Matrix2::new(sx, 0.0, 0.0, sy),
        nalgebra::Vector2::new(tx, ty),
    ))
}

/// Feature matcher over simulated frames. Points inside the ground-truth box
/// ride with it; background points are ray-cast to the ground plane through
/// the previous pose and re-projected through the current one, so they move
/// exactly as a rigid ground plane would under the camera motion.
pub struct SimMatcher {
    pub cam: CameraModel,
    pub seed: u64,
    pub noise: NoiseConfig,
}

impl FeatureMatcher for SimMatcher {
    type Frame = SimFrame;

    fn match_points(
        &mut self,
        prev: &SimFrame,
        cur: &SimFrame,
        queries: &[Point2<f64>],
    ) -> Vec<Option<Point2<f64>>> {
        let mut rng = stream_rng(self.seed, cur.index, 0, PURPOSE_FLOW);
        let normal = gaussian(self.noise.flow_noise_sigma);
        let fg = match (prev.gt_box, cur.gt_box) {
            (Some(a), Some(b)) => box_affine(&a, &b).map(|t| (a, t)),
            _ => None,
        };
        queries
            .iter()
            .map(|q| {
                if rng.gen::<f64>() < self.noise.flow_drop_prob {
                    return None;
                }
                let moved = match &fg {
                    Some((prev_box, t)) if prev_box.contains(q) => Some(t.apply(q)),
                    _ => self
                        .cam
                        .ground_point(&prev.pose, q)
                        .and_then(|g| self.cam.project(&cur.pose, &g)),
                };
                let mut dst = moved?;
                if let Some(n) = &normal {
                    dst.x += n.sample(&mut rng);
                    dst.y += n.sample(&mut rng);
                }
                Some(dst)
            })
            .collect()
    }
}

/// Synthetic detections for the ground-truth boxes intersecting a tile:
/// misses, corner jitter, confidence draws, and Poisson false positives per
/// the noise model. Output boxes are tile-local, as the detector contract
/// requires. With an all-zero detector noise model the output is exactly
/// gt ∩ tile at confidence 1.0.
pub fn synth_detect(
    tile: &BBox,
    gt_boxes: &[(BBox, u32)],
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Vec<Detection> {
    let mut out = Vec::new();
    let jitter = gaussian(noise.det_jitter_sigma);
    for (bbox, class_id) in gt_boxes {
        let Some(inter) = bbox.intersection(tile) else {
            continue;
        };
        if bbox.area() <= 0.0 || inter.area() <= 0.0 {
            continue;
        }
        if inter.area() / bbox.area() < noise.det_min_visibility {
            continue;
        }
        if rng.gen::<f64>() < noise.det_miss_prob {
            continue;
        }
        let mut corners = [
            inter.x_tl - tile.x_tl,
            inter.y_tl - tile.y_tl,
            inter.x_br - tile.x_tl,
            inter.y_br - tile.y_tl,
        ];
        if let Some(n) = &jitter {
            for c in &mut corners {
                *c += n.sample(rng);
            }
        }
        let confidence = if noise.detector_noise_free() {
            1.0
        } else {
            rng.gen_range(0.5..1.0)
        };
        out.push(Detection {
            bbox: BBox::new(corners[0], corners[1], corners[2], corners[3]),
            class_id: *class_id,
            confidence,
        });
    }
    if noise.det_fp_rate > 0.0 {
        let poisson = Poisson::new(noise.det_fp_rate).expect("rate validated positive");
        let false_positives = poisson.sample(rng) as u64;
        for _ in 0..false_positives {
            let w = rng.gen_range(0.03..0.15) * tile.width();
            let h = rng.gen_range(0.03..0.15) * tile.height();
            let x = rng.gen_range(0.0..tile.width() - w);
            let y = rng.gen_range(0.0..tile.height() - h);
            out.push(Detection {
                bbox: BBox::new(x, y, x + w, y + h),
                class_id: 0,
                confidence: rng.gen_range(0.3..0.8),
            });
        }
    }
    out
}

/// Detector stand-in over simulated frames.
pub struct SynthDetector {
    pub seed: u64,
    pub noise: NoiseConfig,
    pub invocations: u64,
}

impl SynthDetector {
    pub fn new(seed: u64, noise: NoiseConfig) -> Self {
        Self {
            seed,
            noise,
            invocations: 0,
        }
    }
}

impl Detector for SynthDetector {
    type Frame = SimFrame;

    fn detect(&mut self, frame: &SimFrame, tile: &BBox) -> Vec<Detection> {
        self.invocations += 1;
        let mut rng = stream_rng(self.seed, frame.index, tile_key(tile), PURPOSE_DETECT);
        let mut gt = Vec::new();
        if let (true, Some(b)) = (frame.visible, frame.gt_box) {
            gt.push((b, 0u32));
        }
        synth_detect(tile, &gt, &self.noise, &mut rng)
    }
}
