//! Deterministic closed-loop world for exercising the tracking and control
//! stack: elephant and UAV motion on a ground plane, a pinhole camera, a
//! geofence wake-up, synthetic detection and point-matching with seeded
//! noise, and a mission phase machine.

pub mod camera;
pub mod error;
pub mod eval;
pub mod runner;
pub mod scenario;
pub mod synth;
pub mod world;

pub use error::SimError;
pub use eval::{evaluate_tracking, TrackingMetrics};
pub use runner::{run_scenario, trajectory_match, write_artifacts, RunArtifacts, RunReport};
pub use scenario::ScenarioConfig;
pub use synth::{NoiseConfig, SimFrame, SimMatcher, SynthDetector};
pub use world::{geofence_check, step_world, MissionPhase, WorldState};
