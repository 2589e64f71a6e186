//! Detection-to-track association: Mahalanobis gating, IOU thresholding, and
//! minimum-cost assignment.
//!
//! The cost of a track/detection pair is the squared Mahalanobis distance of
//! the detection from the track's projected state. Pairs failing either gate
//! (distance above `maha_gate`, overlap below `iou_min`) are priced at
//! `large_cost` so the solver avoids them, and any assignment that still lands
//! on such a pair is stripped from the result.

use nalgebra::{DMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::kalman::MeasurementProjection;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Gate on squared Mahalanobis distance. Default is the chi-square 0.95
    /// quantile with 4 degrees of freedom.
    pub maha_gate: f64,
    /// Minimum IOU between the track's predicted box and the detection.
    pub iou_min: f64,
    /// Sentinel cost for forbidden pairs.
    pub large_cost: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            maha_gate: 9.4877,
            iou_min: 0.3,
            large_cost: 1e6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationResult {
    /// (track index, detection index) pairs, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Squared Mahalanobis distance of a detection from a projected track state.
pub fn mahalanobis_sq(proj: &MeasurementProjection, det: &BBox) -> Result<f64> {
    let z = Vector4::new(det.x_tl, det.y_tl, det.x_br, det.y_br);
    let residual = z - proj.z_hat;
    let chol = proj.s.cholesky().ok_or(Error::SingularInnovation)?;
    let y = chol.solve(&residual);
    Ok(residual.dot(&y))
}

/// Minimum-cost assignment of rows to columns (Hungarian algorithm with
/// potentials, O(n^2 m)). Returns min(n, m) pairs minus any whose cost is at
/// or above `large_cost`, sorted by row index.
pub fn solve_assignment(cost: &DMatrix<f64>, large_cost: f64) -> Vec<(usize, usize)> {
    let (n, m) = (cost.nrows(), cost.ncols());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    // The core routine wants rows <= cols; transpose otherwise.
    let mut pairs = if n <= m {
        assign_rows(n, m, |i, j| cost[(i, j)])
    } else {
        assign_rows(m, n, |i, j| cost[(j, i)])
            .into_iter()
            .map(|(r, c)| (c, r))
            .collect()
    };
    pairs.retain(|&(r, c)| cost[(r, c)] < large_cost);
    pairs.sort_unstable();
    pairs
}

/// Assignment for n <= m via shortest augmenting paths with dual potentials.
/// Indices are offset by one internally so 0 can serve as the virtual root.
fn assign_rows(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    // col_row[j] = row currently assigned to column j (0 = free).
    let mut col_row = vec![0_usize; m + 1];
    let mut way = vec![0_usize; m + 1];

    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0_usize;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m)
        .filter(|&j| col_row[j] != 0)
        .map(|j| (col_row[j] - 1, j - 1))
        .collect()
}

/// Gates every track/detection pair, solves the assignment, and reports the
/// partition. Tracks whose innovation covariance cannot be inverted are
/// excluded from matching and reported unmatched.
pub fn associate(
    tracks: &[(MeasurementProjection, BBox)],
    detections: &[BBox],
    cfg: &AssociationConfig,
) -> AssociationResult {
    let n = tracks.len();
    let m = detections.len();
    let mut cost = DMatrix::from_element(n, m, cfg.large_cost);
    for (i, (proj, pred_box)) in tracks.iter().enumerate() {
        for (j, det) in detections.iter().enumerate() {
            let Ok(d) = mahalanobis_sq(proj, det) else {
                break; // singular S: leave the whole row forbidden
            };
            if d <= cfg.maha_gate && iou(pred_box, det) >= cfg.iou_min {
                cost[(i, j)] = d;
            }
        }
    }

    let matches = solve_assignment(&cost, cfg.large_cost);
    let mut track_used = vec![false; n];
    let mut det_used = vec![false; m];
    for &(i, j) in &matches {
        track_used[i] = true;
        det_used[j] = true;
    }
    AssociationResult {
        matches,
        unmatched_tracks: (0..n).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..m).filter(|&j| !det_used[j]).collect(),
    }
}
