//! Error types shared across the tracker stack.

use thiserror::Error;

/// Failures surfaced by the geometry, filtering and pipeline layers.
///
/// Degenerate fits return errors instead of fallback identities so callers
/// decide policy; the flow stage falls back to the Kalman prediction, the
/// camera-motion stage falls back to the identity homography.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Too few points, or points in a configuration that does not constrain
    /// the requested transform (collinear sources, rank-deficient system).
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),

    /// A point mapped onto the plane at infinity (homogeneous w ~ 0).
    #[error("projective degeneracy: point maps to the plane at infinity")]
    ProjectiveDegeneracy,

    /// Zero-area box where a positive area is required.
    #[error("degenerate box: zero area")]
    DegenerateBox,

    /// Innovation covariance is not invertible; the track state is corrupt.
    #[error("singular innovation covariance")]
    SingularInnovation,

    /// Tile grid parameters produce tiles smaller than one pixel.
    #[error("invalid tile grid: {0}")]
    InvalidGrid(&'static str),

    /// A frame arrived with an index not greater than the last one processed.
    #[error("out-of-order frame: got {got}, last processed {last}")]
    OutOfOrderFrame { got: u64, last: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
