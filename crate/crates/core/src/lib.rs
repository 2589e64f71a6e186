//! Tracking-by-detection and flight-control primitives for an autonomous
//! wildlife-herding UAV stack.
//!
//! The crate is pixel-free: detectors and optical-flow matchers are plug-in
//! interfaces ([`scheduler::Detector`], [`flow::FeatureMatcher`]), so the
//! whole tracker and controller can run against synthetic sensing. Everything
//! here is deterministic value-in/value-out code; the only stateful pieces
//! are the per-stream [`pipeline::TrackerPipeline`], the tile scheduler it
//! owns, and the [`control::PidController`].

pub mod association;
pub mod control;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod kalman;
pub mod pipeline;
pub mod scheduler;

pub use error::Error;
pub use geometry::{AffineTransform, BBox, Homography, PointMatch};
