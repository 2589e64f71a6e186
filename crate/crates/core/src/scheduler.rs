//! Tiled detection scheduling.
//!
//! Full frames are too large for the detector, so the frame is split into a
//! grid of overlapping tiles and exactly one tile is processed per detection
//! slot. Tile selection blends attention (objects seen on the last visit)
//! with aging (slots since the last visit), which keeps object-rich tiles hot
//! while guaranteeing empty tiles are still revisited within a bounded wait.

use serde::{Deserialize, Serialize};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Object detector boundary. `Frame` is the host's frame handle; detections
/// come back in tile-local coordinates. Any rescaling to a fixed network
/// input size happens inside the implementation.
pub trait Detector {
    type Frame;

    fn detect(&mut self, frame: &Self::Frame, tile: &BBox) -> Vec<Detection>;

    /// Nominal per-invocation latency, for budget accounting.
    fn nominal_latency(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Detections below this confidence are discarded.
    pub conf_min: f64,
    /// Aging weight: priority = last_count + age_weight * age.
    pub age_weight: f64,
    /// IOU threshold for cross-tile duplicate suppression.
    pub nms_iou: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            conf_min: 0.5,
            age_weight: 0.5,
            nms_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    /// Tile rectangle in frame coordinates (integer-valued pixels).
    pub rect: BBox,
    /// Detection slots since this tile was last processed.
    pub age: u64,
    /// Objects seen on the last visit.
    pub last_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub cols: usize,
    pub rows: usize,
    pub overlap: f64,
    pub frame_w: u32,
    pub frame_h: u32,
    pub tiles: Vec<Tile>,
}

/// Integer tile start offsets along one axis so that tiles cover
/// `[0, frame]` exactly: the first starts at 0, the last ends at the frame
/// edge, and interior starts are evenly spaced.
fn axis_offsets(frame: u32, tile: u32, n: usize) -> Vec<u32> {
    if n == 1 {
        return vec![0];
    }
    let span = (frame - tile) as f64 / (n - 1) as f64;
    (0..n).map(|i| (i as f64 * span).round() as u32).collect()
}

/// Builds the tile grid. Tile extent along each axis is
/// `frame / (n - (n-1)*overlap)` rounded to whole pixels.
pub fn make_tiles(
    frame_w: u32,
    frame_h: u32,
    cols: usize,
    rows: usize,
    overlap: f64,
) -> Result<TileGrid> {
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidGrid("grid needs at least one tile"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidGrid("overlap must be in [0, 1)"));
    }
    let extent = |frame: u32, n: usize| -> Result<u32> {
        let raw = frame as f64 / (n as f64 - (n as f64 - 1.0) * overlap);
        let px = raw.round() as u32;
        if px < 1 || px > frame {
            return Err(Error::InvalidGrid("tile extent below one pixel"));
        }
        Ok(px)
    };
    let tile_w = extent(frame_w, cols)?;
    let tile_h = extent(frame_h, rows)?;

    let xs = axis_offsets(frame_w, tile_w, cols);
    let ys = axis_offsets(frame_h, tile_h, rows);
    let mut tiles = Vec::with_capacity(cols * rows);
    for &y in &ys {
        for &x in &xs {
            tiles.push(Tile {
                rect: BBox::new(
                    x as f64,
                    y as f64,
                    (x + tile_w) as f64,
                    (y + tile_h) as f64,
                ),
                age: 0,
                last_count: 0,
            });
        }
    }
    Ok(TileGrid {
        cols,
        rows,
        overlap,
        frame_w,
        frame_h,
        tiles,
    })
}

/// Picks the tile for this detection slot and advances the age bookkeeping:
/// the winner's age resets, everyone else ages by one slot. Ties go to the
/// lowest tile index.
pub fn select_tile(grid: &mut TileGrid, cfg: &SchedulerConfig) -> usize {
    debug_assert!(!grid.tiles.is_empty());
    let mut best = 0;
    let mut best_priority = f64::NEG_INFINITY;
    for (i, tile) in grid.tiles.iter().enumerate() {
        let priority = tile.last_count as f64 + cfg.age_weight * tile.age as f64;
        if priority > best_priority {
            best = i;
            best_priority = priority;
        }
    }
    for (i, tile) in grid.tiles.iter_mut().enumerate() {
        if i == best {
            tile.age = 0;
        } else {
            tile.age += 1;
        }
    }
    best
}

/// Records how many objects the detector reported on a visit, feeding the
/// attention term of the next selections.
pub fn report_count(grid: &mut TileGrid, tile_index: usize, count: usize) {
    grid.tiles[tile_index].last_count = count;
}

/// Lifts per-tile detections into frame coordinates, applies the confidence
/// floor, and removes cross-tile duplicates by greedy per-class NMS.
/// Output is ordered by confidence descending, then x_tl.
pub fn merge_detections(
    per_tile: &[(BBox, Vec<Detection>)],
    cfg: &SchedulerConfig,
) -> Vec<Detection> {
    let mut all: Vec<Detection> = per_tile
        .iter()
        .flat_map(|(rect, dets)| {
            dets.iter().map(|d| Detection {
                bbox: BBox::new(
                    d.bbox.x_tl + rect.x_tl,
                    d.bbox.y_tl + rect.y_tl,
                    d.bbox.x_br + rect.x_tl,
                    d.bbox.y_br + rect.y_tl,
                ),
                ..*d
            })
        })
        .filter(|d| d.confidence >= cfg.conf_min)
        .collect();
    all.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.bbox.x_tl.partial_cmp(&b.bbox.x_tl).unwrap())
            .then(a.bbox.y_tl.partial_cmp(&b.bbox.y_tl).unwrap())
    });
    let mut kept: Vec<Detection> = Vec::with_capacity(all.len());
    for d in all {
        let duplicate = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > cfg.nms_iou);
        if !duplicate {
            kept.push(d);
        }
    }
    kept
}
