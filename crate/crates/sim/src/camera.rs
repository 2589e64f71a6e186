//! Pinhole camera rigidly mounted on the UAV, yawing with the airframe and
//! tilted down by a fixed angle. Generates ground-truth boxes by projecting
//! the elephant's bounding volume, and casts pixel rays back to the ground
//! plane for the trajectory evaluation.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use tembo_core::BBox;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Downward tilt of the optical axis from horizontal, degrees.
    pub tilt_deg: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal: 800.0,
            width: 1280,
            height: 720,
            tilt_deg: 35.0,
        }
    }
}

/// Camera pose: optical center plus airframe heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamPose {
    pub pos: Vector3<f64>,
    pub yaw: f64,
}

/// Right-handed camera basis (x right, y down, z forward) in world
/// coordinates for a heading `yaw` and the model's downward tilt.
fn basis(cam: &CameraModel, pose: &CamPose) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (sy, cy) = pose.yaw.sin_cos();
    let (st, ct) = cam.tilt_deg.to_radians().sin_cos();
    let z = Vector3::new(cy * ct, sy * ct, -st);
    let x = Vector3::new(sy, -cy, 0.0);
    let y = Vector3::new(-st * cy, -st * sy, -ct);
    (x, y, z)
}

impl CameraModel {
    pub fn principal_point(&self) -> Point2<f64> {
        Point2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project(&self, pose: &CamPose, world: &Vector3<f64>) -> Option<Point2<f64>> {
        let (x, y, z) = basis(self, pose);
        let d = world - pose.pos;
        let zc = d.dot(&z);
        if zc <= 1e-6 {
            return None;
        }
        let pp = self.principal_point();
        Some(Point2::new(
            pp.x + self.focal * d.dot(&x) / zc,
            pp.y + self.focal * d.dot(&y) / zc,
        ))
    }

    /// Casts the ray through a pixel onto the ground plane z=0. `None` when
    /// the ray points at or above the horizon.
    pub fn ground_point(&self, pose: &CamPose, pixel: &Point2<f64>) -> Option<Vector3<f64>> {
        let (x, y, z) = basis(self, pose);
        let pp = self.principal_point();
        let dir = x * ((pixel.x - pp.x) / self.focal) + y * ((pixel.y - pp.y) / self.focal) + z;
        if dir.z >= -1e-9 {
            return None;
        }
        let t = -pose.pos.z / dir.z;
        if t <= 0.0 {
            return None;
        }
        let mut p = pose.pos + dir * t;
        p.z = 0.0;
        Some(p)
    }
}

/// Projects the elephant's bounding volume (world-axis-aligned, `dims` =
/// extents in x/y/z, standing on the ground at `center`) into the image.
///
/// Returns the axis-aligned image box clipped to the frame, and a visibility
/// flag: all corners in front of the camera and a nonzero clipped area.
pub fn render_ground_truth(
    cam: &CameraModel,
    pose: &CamPose,
    center: &Vector3<f64>,
    dims: &Vector3<f64>,
) -> (Option<BBox>, bool) {
    let hx = dims.x / 2.0;
    let hy = dims.y / 2.0;
    let mut min_u = f64::INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for &dx in &[-hx, hx] {
        for &dy in &[-hy, hy] {
            for &z in &[0.0, dims.z] {
                let corner = Vector3::new(center.x + dx, center.y + dy, z);
                match cam.project(pose, &corner) {
                    Some(p) => {
                        min_u = min_u.min(p.x);
                        min_v = min_v.min(p.y);
                        max_u = max_u.max(p.x);
                        max_v = max_v.max(p.y);
                    }
                    None => return (None, false),
                }
            }
        }
    }
    let raw = BBox::new(min_u, min_v, max_u, max_v);
    let frame = BBox::new(0.0, 0.0, cam.width as f64, cam.height as f64);
    match raw.intersection(&frame) {
        Some(clipped) if clipped.area() > 0.0 => (Some(clipped), true),
        _ => (None, false),
    }
}
