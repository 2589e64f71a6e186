//! Closed-loop scenario execution: world → camera → tracker → PID → world,
//! once per simulated frame, with all artifacts captured as strings so runs
//! can be compared byte-for-byte.

use std::time::{Duration, Instant};

use nalgebra::{Point2, Vector3};
use serde::Serialize;

use crate::camera::{render_ground_truth, CamPose, CameraModel};
use crate::error::{Result, SimError};
use crate::scenario::ScenarioConfig;
use crate::synth::{SimFrame, SimMatcher, SynthDetector};
use crate::world::{step_world, MissionPhase, WorldState};
use tembo_core::control::{compute_errors, pid_step, ControlCommand, PidState};
use tembo_core::pipeline::{fmt2, frame_result_jsonl, FrameResult, TrackStatus, TrackerPipeline};

/// Metrics summary of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub frames: u64,
    pub detector_invocations: u64,
    pub tracks_created: u64,
    pub tracks_confirmed: u64,
    pub tracks_deleted: u64,
    /// Fraction of herding-phase samples where the standoff-offset UAV path
    /// is within the margin of the ground-projected tracked box.
    pub trajectory_match: f64,
    /// Mean best-track IOU against ground truth over camera-phase frames.
    pub mean_track_iou: f64,
    /// Wall-clock throughput of the tracker path (pipeline stepping only).
    pub throughput_fps: f64,
}

/// Everything a run produces. Artifact texts are deterministic for a given
/// (config, seed); the report additionally carries wall-clock throughput.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trajectory_csv: String,
    pub tracks_jsonl: String,
    pub commands_jsonl: String,
    pub gt_jsonl: String,
    pub report: RunReport,
}

/// Fraction of aligned samples whose planar distance is within `margin`.
pub fn trajectory_match(
    uav_traj: &[Vector3<f64>],
    gt_traj: &[Vector3<f64>],
    margin: f64,
) -> Result<f64> {
    if uav_traj.len() != gt_traj.len() {
        return Err(SimError::LengthMismatch {
            a: uav_traj.len(),
            b: gt_traj.len(),
        });
    }
    if uav_traj.is_empty() {
        return Ok(0.0);
    }
    let within = uav_traj
        .iter()
        .zip(gt_traj)
        .filter(|(u, g)| ((u.x - g.x).powi(2) + (u.y - g.y).powi(2)).sqrt() <= margin)
        .count();
    Ok(within as f64 / uav_traj.len() as f64)
}

fn render(cam: &CameraModel, world: &WorldState, index: u64, dims: &Vector3<f64>) -> SimFrame {
    let pose = CamPose {
        pos: world.uav_pos,
        yaw: world.uav_yaw,
    };
    let center = Vector3::new(world.elephant_pos.x, world.elephant_pos.y, 0.0);
    let (gt_box, visible) = render_ground_truth(cam, &pose, &center, dims);
    SimFrame {
        index,
        pose,
        gt_box,
        visible,
    }
}

/// The track the controller follows: the previously followed id if it is
/// still confirmed, otherwise the lowest confirmed id, otherwise none.
fn pick_followed(result: &FrameResult, current: Option<u64>) -> Option<u64> {
    let confirmed = |id: u64| {
        result
            .tracks
            .iter()
            .any(|t| t.id == id && t.status == TrackStatus::Confirmed)
    };
    match current {
        Some(id) if confirmed(id) => Some(id),
        _ => result
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .map(|t| t.id)
            .min(),
    }
}

fn command_jsonl(frame: u64, cmd: &ControlCommand) -> String {
    format!(
        "{{\"frame\": {}, \"yaw\": {:.4}, \"pitch\": {:.4}, \"roll\": {:.4}}}",
        frame,
        normalize4(cmd.yaw_rate),
        normalize4(cmd.pitch_rate),
        normalize4(cmd.roll_rate)
    )
}

/// Rounds to 4 decimals with negative zero normalized, mirroring `fmt2`.
fn normalize4(v: f64) -> f64 {
    let r = (v * 10_000.0).round() / 10_000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn gt_jsonl_line(frame: &SimFrame, phase: MissionPhase) -> String {
    match (frame.visible, frame.gt_box) {
        (true, Some(b)) => format!(
            "{{\"frame\": {}, \"visible\": true, \"phase\": \"{}\", \"tlbr\": [{}, {}, {}, {}]}}",
            frame.index,
            phase,
            fmt2(b.x_tl),
            fmt2(b.y_tl),
            fmt2(b.x_br),
            fmt2(b.y_br)
        ),
        _ => format!(
            "{{\"frame\": {}, \"visible\": false, \"phase\": \"{}\", \"tlbr\": null}}",
            frame.index, phase
        ),
    }
}

/// Runs the closed loop for `cfg.frames` frames and collects all artifacts.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dt = cfg.dt();
    let dims = Vector3::new(
        cfg.world.elephant_size[0],
        cfg.world.elephant_size[1],
        cfg.world.elephant_size[2],
    );
    let cam = cfg.camera;

    let matcher = SimMatcher {
        cam,
        seed: cfg.seed,
        noise: cfg.noise,
    };
    let detector = SynthDetector::new(cfg.seed, cfg.noise);
    let mut pipeline = TrackerPipeline::new(cfg.pipeline, matcher, detector)?;

    let mut world = WorldState::initial(cfg);
    let mut prev_frame = render(&cam, &world, 0, &dims);
    // Pixel row where the ground plane lies exactly `standoff` meters ahead.
    // The pitch channel holds the followed box's bottom edge — the target's
    // ground contact line — on this row, which regulates following distance
    // independently of how large the target looms in the frame.
    let standoff_row = cam.height as f64 / 2.0
        + cam.focal
            * ((cfg.uav.altitude / cfg.uav.standoff).atan() - cam.tilt_deg.to_radians()).tan();
    let mut cmd = ControlCommand::default();
    let mut pid = PidState::default();
    let mut followed: Option<u64> = None;
    let mut confirmed_exists = false;

    let mut trajectory_csv = String::from("t,ex,ey,ux,uy,phase\n");
    let mut tracks_jsonl = String::new();
    let mut commands_jsonl = String::new();
    let mut gt_jsonl = String::new();

    let mut uav_traj: Vec<Vector3<f64>> = Vec::new();
    let mut gt_traj: Vec<Vector3<f64>> = Vec::new();
    let mut iou_samples: Vec<f64> = Vec::new();

    let mut ids_seen = std::collections::BTreeSet::new();
    let mut ids_confirmed = std::collections::BTreeSet::new();
    let mut detector_invocations = 0u64;
    let mut tracker_elapsed = Duration::ZERO;

    for f in 1..=cfg.frames {
        // World advances under the command issued after the previous frame.
        world = step_world(&world, &cmd, cfg, dt, confirmed_exists);
        let cur_frame = render(&cam, &world, f, &dims);

        let started = Instant::now();
        let result = pipeline.step(&prev_frame, &cur_frame, f)?;
        tracker_elapsed += started.elapsed();

        if result.detector_ran {
            detector_invocations += 1;
        }
        for t in &result.tracks {
            ids_seen.insert(t.id);
            if t.status == TrackStatus::Confirmed {
                ids_confirmed.insert(t.id);
            }
        }
        confirmed_exists = result
            .tracks
            .iter()
            .any(|t| t.status == TrackStatus::Confirmed);
        followed = pick_followed(&result, followed);

        // Visual servoing off the followed track; idle channels otherwise.
        let followed_box = followed.and_then(|id| {
            result
                .tracks
                .iter()
                .find(|t| t.id == id)
                .map(|t| t.bbox)
        });
        let in_servo_phase =
            world.phase == MissionPhase::Track || world.phase == MissionPhase::Herd;
        if let (true, Some(bbox)) = (in_servo_phase, followed_box) {
            let mut err = compute_errors(
                &bbox,
                cam.width as f64,
                cam.height as f64,
                cfg.control.ref_area,
            );
            // Centering the whole box would park the target nearer than the
            // standoff (the box's lower half covers the ground in between);
            // steer its bottom edge onto the standoff row instead.
            err.dy = bbox.y_br - standoff_row;
            let (next_cmd, next_pid) = pid_step(&err, &pid, &cfg.control.gains, dt);
            cmd = next_cmd;
            pid = next_pid;
        } else {
            cmd = ControlCommand::default();
            pid = PidState::default();
        }

        // Quality samples against ground truth during the camera phases.
        if in_servo_phase {
            if let Some(gt) = cur_frame.gt_box {
                let best = result
                    .tracks
                    .iter()
                    .map(|t| tembo_core::geometry::iou(&t.bbox, &gt))
                    .fold(0.0, f64::max);
                iou_samples.push(best);
            }
        }

        // Trajectory samples: herding phase, followed box projected to the
        // ground vs the UAV path offset by the standoff distance.
        if world.phase == MissionPhase::Herd {
            if let Some(bbox) = followed_box {
                let bottom_center = Point2::new(bbox.center().x, bbox.y_br);
                if let Some(ground) = cam.ground_point(&cur_frame.pose, &bottom_center) {
                    let heading = Vector3::new(world.uav_yaw.cos(), world.uav_yaw.sin(), 0.0);
                    let expected =
                        Vector3::new(world.uav_pos.x, world.uav_pos.y, 0.0) + heading * cfg.uav.standoff;
                    uav_traj.push(expected);
                    gt_traj.push(ground);
                }
            }
        }

        trajectory_csv.push_str(&format!(
            "{:.3},{:.3},{:.3},{:.3},{:.3},{}\n",
            world.t, world.elephant_pos.x, world.elephant_pos.y, world.uav_pos.x, world.uav_pos.y, world.phase
        ));
        tracks_jsonl.push_str(&frame_result_jsonl(&result));
        tracks_jsonl.push('\n');
        commands_jsonl.push_str(&command_jsonl(f, &cmd));
        commands_jsonl.push('\n');
        gt_jsonl.push_str(&gt_jsonl_line(&cur_frame, world.phase));
        gt_jsonl.push('\n');

        prev_frame = cur_frame;
    }

    let live_at_end = pipeline.tracks().len() as u64;
    let tracks_created = ids_seen.len() as u64;
    let secs = tracker_elapsed.as_secs_f64();
    let report = RunReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        frames: cfg.frames,
        detector_invocations,
        tracks_created,
        tracks_confirmed: ids_confirmed.len() as u64,
        tracks_deleted: tracks_created.saturating_sub(live_at_end),
        trajectory_match: trajectory_match(&uav_traj, &gt_traj, 1.0)?,
        mean_track_iou: if iou_samples.is_empty() {
            0.0
        } else {
            iou_samples.iter().sum::<f64>() / iou_samples.len() as f64
        },
        throughput_fps: if secs > 0.0 {
            cfg.frames as f64 / secs
        } else {
            0.0
        },
    };

    Ok(RunArtifacts {
        trajectory_csv,
        tracks_jsonl,
        commands_jsonl,
        gt_jsonl,
        report,
    })
}

/// Writes all artifacts under `dir`: trajectory.csv, tracks.jsonl,
/// commands.jsonl, gt.jsonl, report.json.
pub fn write_artifacts(artifacts: &RunArtifacts, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), &artifacts.trajectory_csv)?;
    std::fs::write(dir.join("tracks.jsonl"), &artifacts.tracks_jsonl)?;
    std::fs::write(dir.join("commands.jsonl"), &artifacts.commands_jsonl)?;
    std::fs::write(dir.join("gt.jsonl"), &artifacts.gt_jsonl)?;
    let mut report = serde_json::to_string_pretty(&artifacts.report)
        .map_err(|e| SimError::Config(format!("report serialization: {e}")))?;
    report.push('\n');
    std::fs::write(dir.join("report.json"), report)?;
    Ok(())
}
