//! Pixel-space geometric primitives shared by the tracker and controller:
//! axis-aligned boxes, point correspondences, and least-squares estimation
//! of affine and homography transforms.
//!
//! Fitting is plain least squares with no outlier-rejection loop; degenerate
//! configurations surface as [`Error::DegenerateConfiguration`] so callers
//! decide the fallback.

use nalgebra::{DMatrix, Matrix2, Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous coordinates below this are treated as the plane at infinity.
const W_EPS: f64 = 1e-9;

/// Determinant magnitude below this marks a homography as non-invertible.
const DET_EPS: f64 = 1e-12;

/// Axis-aligned bounding box in pixel coordinates, corner form.
///
/// Corner form (top-left, bottom-right) is the single box convention across
/// the stack; it is also the Kalman state parameterization, so no conversion
/// happens at the filter boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BBox {
    /// Builds a box from two corners, swapping coordinates as needed so the
    /// invariants `x_tl <= x_br`, `y_tl <= y_br` hold.
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Self {
        Self {
            x_tl: x_tl.min(x_br),
            y_tl: y_tl.min(y_br),
            x_br: x_tl.max(x_br),
            y_br: y_tl.max(y_br),
        }
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(
            (self.x_tl + self.x_br) * 0.5,
            (self.y_tl + self.y_br) * 0.5,
        )
    }

    pub fn top_left(&self) -> Point2<f64> {
        Point2::new(self.x_tl, self.y_tl)
    }

    pub fn bottom_right(&self) -> Point2<f64> {
        Point2::new(self.x_br, self.y_br)
    }

    /// Intersection area with another box; zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_br.min(other.x_br) - self.x_tl.max(other.x_tl)).max(0.0);
        let h = (self.y_br.min(other.y_br) - self.y_tl.max(other.y_tl)).max(0.0);
        w * h
    }

    /// Intersection box, or `None` when the boxes do not overlap.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_tl = self.x_tl.max(other.x_tl);
        let y_tl = self.y_tl.max(other.y_tl);
        let x_br = self.x_br.min(other.x_br);
        let y_br = self.y_br.min(other.y_br);
        if x_tl < x_br && y_tl < y_br {
            Some(BBox::new(x_tl, y_tl, x_br, y_br))
        } else {
            None
        }
    }

    /// Box grown by `fraction` of its extent on every side.
    pub fn dilated(&self, fraction: f64) -> BBox {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        BBox::new(self.x_tl - dx, self.y_tl - dy, self.x_br + dx, self.y_br + dy)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.x_tl && p.x <= self.x_br && p.y >= self.y_tl && p.y <= self.y_br
    }
}

/// One point correspondence between two frames, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    pub src: Point2<f64>,
    pub dst: Point2<f64>,
}

impl PointMatch {
    pub fn new(src: Point2<f64>, dst: Point2<f64>) -> Self {
        Self { src, dst }
    }
}

/// 2D affine transform `p -> A * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub linear: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl AffineTransform {
    pub fn new(linear: Matrix2<f64>, translation: Vector2<f64>) -> Self {
        Self { linear, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix2::identity(), Vector2::zeros())
    }

    pub fn apply(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::from(self.linear * p.coords + self.translation)
    }
}

/// 3x3 projective transform, normalized so `H[2][2] == 1` whenever that
/// entry is nonzero. All fitted homographies are checked invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    /// Wraps a matrix, normalizing the `H[2][2] == 1` convention. Fails when
    /// the matrix is not invertible.
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.determinant().abs() <= DET_EPS {
            return Err(Error::DegenerateConfiguration("homography not invertible"));
        }
        Ok(Self::normalized(matrix))
    }

    fn normalized(mut matrix: Matrix3<f64>) -> Self {
        let w = matrix[(2, 2)];
        if w.abs() > W_EPS {
            matrix /= w;
        }
        Self { matrix }
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn from_translation(tx: f64, ty: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = tx;
        m[(1, 2)] = ty;
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.matrix - Matrix3::identity()).amax() <= tol
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.matrix
            .try_inverse()
            .ok_or(Error::DegenerateConfiguration("homography not invertible"))
            .map(Self::normalized)
    }

    /// Maps a point through the homography with perspective divide.
    pub fn apply(&self, p: &Point2<f64>) -> Result<Point2<f64>> {
        let q = self.matrix * Vector3::new(p.x, p.y, 1.0);
        if q.z.abs() < W_EPS {
            return Err(Error::ProjectiveDegeneracy);
        }
        Ok(Point2::new(q.x / q.z, q.y / q.z))
    }

    /// Jacobian of the projective map at `p` (first-order local linearization).
    ///
    /// Exactly the identity for pure translations; used to transform
    /// velocities and covariances under camera motion.
    pub fn jacobian_at(&self, p: &Point2<f64>) -> Result<Matrix2<f64>> {
        let m = &self.matrix;
        let u = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)];
        let v = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)];
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < W_EPS {
            return Err(Error::ProjectiveDegeneracy);
        }
        let iw = 1.0 / w;
        // d(u/w)/dx = (u_x * w - u * w_x) / w^2, and so on per component.
        Ok(Matrix2::new(
            (m[(0, 0)] - u * iw * m[(2, 0)]) * iw,
            (m[(0, 1)] - u * iw * m[(2, 1)]) * iw,
            (m[(1, 0)] - v * iw * m[(2, 0)]) * iw,
            (m[(1, 1)] - v * iw * m[(2, 1)]) * iw,
        ))
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
///
/// Returns 0 when the union is empty (two degenerate boxes).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Least-squares affine fit mapping `src` points onto `dst` points.
///
/// Minimizes the sum of squared residuals `|A * src + t - dst|^2`; exact on
/// affine-consistent inputs. Needs at least 3 matches with non-collinear
/// source points.
pub fn estimate_affine(matches: &[PointMatch]) -> Result<AffineTransform> {
    let n = matches.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration("affine fit needs >= 3 matches"));
    }

    // Rows [x y 1]; the u and v coordinates solve two independent systems
    // against the same design matrix.
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => matches[i].src.x,
        1 => matches[i].src.y,
        _ => 1.0,
    });
    let rhs = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            matches[i].dst.x
        } else {
            matches[i].dst.y
        }
    });

    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= max_sv * 1e-10) {
        return Err(Error::DegenerateConfiguration("collinear source points"));
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::DegenerateConfiguration("affine solve failed"))?;

    Ok(AffineTransform::new(
        Matrix2::new(sol[(0, 0)], sol[(1, 0)], sol[(0, 1)], sol[(1, 1)]),
        Vector2::new(sol[(2, 0)], sol[(2, 1)]),
    ))
}

/// Direct linear transform homography fit, `dst ~ H * src` in the
/// least-squares sense, with Hartley point normalization.
///
/// Needs at least 4 matches with no 3 source points collinear; the result is
/// normalized so `H[2][2] == 1` and checked invertible.
pub fn estimate_homography(matches: &[PointMatch]) -> Result<Homography> {
    let n = matches.len();
    if n < 4 {
        return Err(Error::DegenerateConfiguration(
            "homography fit needs >= 4 matches",
        ));
    }

    let src: Vec<Point2<f64>> = matches.iter().map(|m| m.src).collect();
    let dst: Vec<Point2<f64>> = matches.iter().map(|m| m.dst).collect();
    let (src_n, t_src) = normalize_points(&src)?;
    let (dst_n, t_dst) = normalize_points(&dst)?;

    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for i in 0..n {
        let (x, y) = (src_n[i].x, src_n[i].y);
        let (u, v) = (dst_n[i].x, dst_n[i].y);
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    // Null vector of the design matrix: right singular vector for the
    // smallest singular value.
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(Error::DegenerateConfiguration("svd failed on DLT system"))?;
    let h_vec = v_t.row(v_t.nrows() - 1);

    let h_n = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(Error::DegenerateConfiguration("normalization not invertible"))?;
    Homography::new(t_dst_inv * h_n * t_src)
}

/// Hartley normalization: zero centroid, mean distance sqrt(2). Returns the
/// normalized points and the similarity transform that produced them.
fn normalize_points(points: &[Point2<f64>]) -> Result<(Vec<Point2<f64>>, Matrix3<f64>)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateConfiguration("coincident points"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let normalized = points
        .iter()
        .map(|p| Point2::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    Ok((normalized, t))
}

/// Warps a box through a homography by mapping its two defining corners,
/// then re-normalizing so the corner order holds.
pub fn warp_box(b: &BBox, h: &Homography) -> Result<BBox> {
    let tl = h.apply(&b.top_left())?;
    let br = h.apply(&b.bottom_right())?;
    Ok(BBox::new(tl.x, tl.y, br.x, br.y))
}
