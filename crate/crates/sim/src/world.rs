//! Ground-plane world model and mission phase machine.
//!
//! A GPS-tagged elephant walks on the z=0 plane; the tag wakes when it
//! crosses the circular geofence around the ground base, the UAV launches and
//! navigates to the tag, hands over to the onboard camera for tracking, herds
//! the elephant back out past the fence, and returns home.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioConfig;
use tembo_core::control::ControlCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissionPhase {
    Idle,
    Navigate,
    Track,
    Herd,
    Return,
}

impl std::fmt::Display for MissionPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MissionPhase::Idle => "Idle",
            MissionPhase::Navigate => "Navigate",
            MissionPhase::Track => "Track",
            MissionPhase::Herd => "Herd",
            MissionPhase::Return => "Return",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    /// Simulation time, seconds.
    pub t: f64,
    pub elephant_pos: Vector3<f64>,
    pub elephant_vel: Vector3<f64>,
    pub uav_pos: Vector3<f64>,
    pub uav_vel: Vector3<f64>,
    /// UAV heading, radians, counterclockwise from +x.
    pub uav_yaw: f64,
    pub base_pos: Vector3<f64>,
    pub tag_awake: bool,
    pub phase: MissionPhase,
    /// Set once the elephant has felt herding pressure; it then stops
    /// resuming its scripted walk when the UAV backs off.
    pub spooked: bool,
}

impl WorldState {
    pub fn initial(cfg: &ScenarioConfig) -> Self {
        let base = Vector3::new(cfg.world.base[0], cfg.world.base[1], 0.0);
        let elephant = Vector3::new(
            cfg.world.elephant_start[0],
            cfg.world.elephant_start[1],
            0.0,
        );
        Self {
            t: 0.0,
            elephant_pos: elephant,
            elephant_vel: Vector3::zeros(),
            uav_pos: base,
            uav_vel: Vector3::zeros(),
            uav_yaw: 0.0,
            base_pos: base,
            tag_awake: false,
            phase: MissionPhase::Idle,
            spooked: false,
        }
    }
}

fn planar_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Tag wake test: inside or on the geofence circle (planar distance).
pub fn geofence_check(elephant_pos: &Vector3<f64>, base_pos: &Vector3<f64>, radius: f64) -> bool {
    planar_distance(elephant_pos, base_pos) <= radius
}

fn planar_unit(from: &Vector3<f64>, to: &Vector3<f64>) -> Option<Vector3<f64>> {
    let d = Vector3::new(to.x - from.x, to.y - from.y, 0.0);
    let n = d.norm();
    if n < 1e-9 {
        None
    } else {
        Some(d / n)
    }
}

/// Advances the world by `dt`. `cmd` is what the PID controller issued this
/// frame; it steers only in the camera-guided phases. `confirmed_track` tells
/// the phase machine whether the tracker currently holds a confirmed track.
pub fn step_world(
    state: &WorldState,
    cmd: &ControlCommand,
    cfg: &ScenarioConfig,
    dt: f64,
    confirmed_track: bool,
) -> WorldState {
    debug_assert!(dt > 0.0);
    let mut s = *state;
    let w = &cfg.world;
    let u = &cfg.uav;

    // --- Elephant ---
    let pressured = s.phase == MissionPhase::Herd
        && planar_distance(&s.uav_pos, &s.elephant_pos) <= w.herd_pressure_radius;
    s.elephant_vel = if pressured {
        s.spooked = true;
        planar_unit(&s.uav_pos, &s.elephant_pos)
            .map(|d| d * w.elephant_flee_speed)
            .unwrap_or_else(Vector3::zeros)
    } else if s.spooked {
        Vector3::zeros()
    } else {
        let target = Vector3::new(w.elephant_target[0], w.elephant_target[1], 0.0);
        if planar_distance(&s.elephant_pos, &target) <= w.elephant_walk_speed * dt {
            Vector3::zeros()
        } else {
            planar_unit(&s.elephant_pos, &target)
                .map(|d| d * w.elephant_walk_speed)
                .unwrap_or_else(Vector3::zeros)
        }
    };
    s.elephant_pos += s.elephant_vel * dt;
    s.elephant_pos.z = 0.0;

    // --- UAV ---
    let target_alt = match s.phase {
        MissionPhase::Idle => 0.0,
        _ => u.altitude,
    };
    let climb = (target_alt - s.uav_pos.z).clamp(-u.climb_rate * dt, u.climb_rate * dt);

    let mut planar_vel = Vector3::zeros();
    match s.phase {
        MissionPhase::Idle => {}
        MissionPhase::Navigate => {
            // Waypoint navigation toward the GPS tag.
            if let Some(dir) = planar_unit(&s.uav_pos, &s.elephant_pos) {
                planar_vel = dir * u.nav_speed;
                s.uav_yaw = dir.y.atan2(dir.x);
            }
        }
        MissionPhase::Track => {
            if confirmed_track {
                planar_vel = servo_velocity(cmd, &mut s.uav_yaw, u, dt);
            } else if let Some(dir) = planar_unit(&s.uav_pos, &s.elephant_pos) {
                // Keep closing on the tag at reduced speed while the tracker
                // locks on; heading stays on the tag so the camera sees it.
                planar_vel = dir * u.acquire_speed;
                s.uav_yaw = dir.y.atan2(dir.x);
            }
        }
        MissionPhase::Herd => {
            planar_vel = servo_velocity(cmd, &mut s.uav_yaw, u, dt);
        }
        MissionPhase::Return => {
            if let Some(dir) = planar_unit(&s.uav_pos, &s.base_pos) {
                planar_vel = dir * u.nav_speed;
                s.uav_yaw = dir.y.atan2(dir.x);
            }
        }
    }
    let speed = planar_vel.norm();
    if speed > u.max_speed {
        planar_vel *= u.max_speed / speed;
    }
    s.uav_vel = planar_vel;
    s.uav_pos += planar_vel * dt;
    s.uav_pos.z = (s.uav_pos.z + climb).max(0.0);

    s.t += dt;
    s.tag_awake = geofence_check(&s.elephant_pos, &s.base_pos, w.geofence_radius);

    // --- Phase transitions (evaluated on the post-step state) ---
    s.phase = match s.phase {
        MissionPhase::Idle if s.tag_awake => MissionPhase::Navigate,
        MissionPhase::Navigate
            if planar_distance(&s.uav_pos, &s.elephant_pos) <= w.camera_handoff_distance =>
        {
            MissionPhase::Track
        }
        MissionPhase::Track if confirmed_track => MissionPhase::Herd,
        MissionPhase::Herd
            if planar_distance(&s.elephant_pos, &s.base_pos)
                > w.geofence_radius + w.herd_exit_margin =>
        {
            MissionPhase::Return
        }
        MissionPhase::Return
            if planar_distance(&s.uav_pos, &s.base_pos) <= w.waypoint_tolerance =>
        {
            MissionPhase::Idle
        }
        other => other,
    };

    s
}

/// Maps angular-rate commands to planar body velocity and heading change.
///
/// Positive yaw/roll commands mean "target is right of center": the UAV turns
/// clockwise (heading decreases in the counterclockwise-positive convention)
/// and strafes right. A positive pitch command means "target low or large in
/// frame", i.e. too close, so forward speed runs opposite to it.
fn servo_velocity(
    cmd: &ControlCommand,
    yaw: &mut f64,
    u: &crate::scenario::UavConfig,
    dt: f64,
) -> Vector3<f64> {
    *yaw -= cmd.yaw_rate.to_radians() * dt;
    let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let right = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let v_fwd = -u.speed_per_pitch * cmd.pitch_rate;
    let v_right = u.speed_per_roll * cmd.roll_rate;
    forward * v_fwd + right * v_right
}
