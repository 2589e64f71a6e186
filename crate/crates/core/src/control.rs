//! Visual-servoing PID control.
//!
//! The controller sees only image-space errors from the tracked box: the
//! horizontal and vertical offsets of the box centroid from the frame center,
//! and the area error against a fixed reference box. Horizontal offset drives
//! yaw and roll; the vertical offset and the area error blend into a single
//! pitch error (closing distance changes both apparent height and size).

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// Image-space control errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlError {
    /// Box centroid x minus frame center x, px.
    pub dx: f64,
    /// Box centroid y minus frame center y, px.
    pub dy: f64,
    /// Box area minus reference area, px².
    pub d_area: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for ChannelGains {
    fn default() -> Self {
        Self {
            kp: 0.1,
            ki: 0.0,
            kd: 0.0,
        }
    }
}

/// Gains and limits for all three channels. The tuned values are scenario
/// data; these defaults are only a mild starting point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub yaw: ChannelGains,
    pub roll: ChannelGains,
    pub pitch: ChannelGains,
    /// Anti-windup clamp on each channel's accumulated integral term.
    pub integral_limit: f64,
    /// Symmetric saturation on each output, deg/s.
    pub output_limit: f64,
    /// Weight of the vertical offset in the pitch error.
    pub pitch_dy_weight: f64,
    /// Weight of the area error in the pitch error; area errors run ~100x
    /// larger than position errors, hence the small default.
    pub pitch_area_weight: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            yaw: ChannelGains::default(),
            roll: ChannelGains::default(),
            pitch: ChannelGains::default(),
            integral_limit: 10.0,
            output_limit: 30.0,
            pitch_dy_weight: 1.0,
            pitch_area_weight: 0.01,
        }
    }
}

/// Angular-rate commands handed to the flight controller, deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    pub yaw_rate: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelState {
    /// Accumulated, gain-scaled integral term (ki·∫e dt), clamped.
    pub integral: f64,
    pub prev_error: f64,
}

/// Controller memory across steps. Zeroed at start; the first derivative
/// therefore differentiates against zero history.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub yaw: ChannelState,
    pub roll: ChannelState,
    pub pitch: ChannelState,
}

/// Errors of the tracked box against the frame center and a reference area.
pub fn compute_errors(bbox: &BBox, frame_w: f64, frame_h: f64, ref_area: f64) -> ControlError {
    let c = bbox.center();
    ControlError {
        dx: c.x - frame_w / 2.0,
        dy: c.y - frame_h / 2.0,
        d_area: bbox.area() - ref_area,
    }
}

fn clamp(v: f64, limit: f64) -> f64 {
    v.clamp(-limit, limit)
}

fn channel_step(
    e: f64,
    state: &ChannelState,
    g: &ChannelGains,
    integral_limit: f64,
    output_limit: f64,
    dt: f64,
) -> (f64, ChannelState) {
    let integral = clamp(state.integral + g.ki * e * dt, integral_limit);
    let derivative = (e - state.prev_error) / dt;
    let u = clamp(g.kp * e + integral + g.kd * derivative, output_limit);
    (
        u,
        ChannelState {
            integral,
            prev_error: e,
        },
    )
}

/// One controller step. Yaw and roll act on `dx`; pitch acts on the blended
/// `pitch_dy_weight·dy + pitch_area_weight·d_area`.
pub fn pid_step(
    err: &ControlError,
    state: &PidState,
    gains: &PidGains,
    dt: f64,
) -> (ControlCommand, PidState) {
    debug_assert!(dt > 0.0);
    let pitch_error = gains.pitch_dy_weight * err.dy + gains.pitch_area_weight * err.d_area;
    let (yaw, yaw_s) = channel_step(
        err.dx,
        &state.yaw,
        &gains.yaw,
        gains.integral_limit,
        gains.output_limit,
        dt,
    );
    let (roll, roll_s) = channel_step(
        err.dx,
        &state.roll,
        &gains.roll,
        gains.integral_limit,
        gains.output_limit,
        dt,
    );
    let (pitch, pitch_s) = channel_step(
        pitch_error,
        &state.pitch,
        &gains.pitch,
        gains.integral_limit,
        gains.output_limit,
        dt,
    );
    (
        ControlCommand {
            yaw_rate: yaw,
            roll_rate: roll,
            pitch_rate: pitch,
        },
        PidState {
            yaw: yaw_s,
            roll: roll_s,
            pitch: pitch_s,
        },
    )
}
