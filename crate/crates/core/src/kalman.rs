//! Constant-velocity Kalman filter over an 8-dim corner state
//! `(x_tl, y_tl, x_br, y_br, vx_tl, vy_tl, vx_br, vy_br)`.
//!
//! The two box corners are predicted jointly: each corner's position advances
//! by a `lambda`-blend of its own velocity and the opposite corner's, which
//! stops the box size drifting when the corners are otherwise modeled
//! independently. The same coupling is encoded in the transition matrix so
//! covariance propagation stays consistent with the mean map.
//!
//! The measurement space is the four corner positions only.

use nalgebra::{Matrix2, Matrix4, Point2, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Homography};

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;

/// Filter parameters. `lambda` is the corner coupling factor; 1.0 reduces to
/// the classic independent constant-velocity model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    pub lambda: f64,
    /// Time step in frames.
    pub dt: f64,
    /// Process noise on position terms, px^2 per step.
    pub q_pos: f64,
    /// Process noise on velocity terms, (px/frame)^2 per step.
    pub q_vel: f64,
    /// Measurement noise variance, px^2.
    pub r_meas: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            dt: 1.0,
            q_pos: 1.0,
            q_vel: 0.25,
            r_meas: 4.0,
        }
    }
}

/// Per-track filter state: mean and covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub x: StateVector,
    pub p: StateMatrix,
}

impl KalmanState {
    /// Current position estimate as a box (corner order normalized).
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x[0], self.x[1], self.x[2], self.x[3])
    }

    pub fn positions(&self) -> Vector4<f64> {
        Vector4::new(self.x[0], self.x[1], self.x[2], self.x[3])
    }

    pub fn velocities(&self) -> Vector4<f64> {
        Vector4::new(self.x[4], self.x[5], self.x[6], self.x[7])
    }
}

/// Track state projected onto the measurement space.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementProjection {
    pub z_hat: Vector4<f64>,
    pub s: Matrix4<f64>,
}

fn measurement_vector(b: &BBox) -> Vector4<f64> {
    Vector4::new(b.x_tl, b.y_tl, b.x_br, b.y_br)
}

/// Transition matrix encoding the coupled corner rule.
pub fn transition_matrix(cfg: &KalmanConfig) -> StateMatrix {
    let mut f = StateMatrix::identity();
    let own = cfg.lambda * cfg.dt;
    let other = (1.0 - cfg.lambda) * cfg.dt;
    // x_tl <- lambda*vx_tl + (1-lambda)*vx_br, and symmetrically for the
    // bottom-right corner; y components likewise.
    f[(0, 4)] = own;
    f[(0, 6)] = other;
    f[(1, 5)] = own;
    f[(1, 7)] = other;
    f[(2, 6)] = own;
    f[(2, 4)] = other;
    f[(3, 7)] = own;
    f[(3, 5)] = other;
    f
}

fn process_noise(cfg: &KalmanConfig) -> StateMatrix {
    let mut q = StateMatrix::zeros();
    for i in 0..4 {
        q[(i, i)] = cfg.q_pos;
        q[(i + 4, i + 4)] = cfg.q_vel;
    }
    q
}

fn symmetrize(m: &mut StateMatrix) {
    *m = (*m + m.transpose()) * 0.5;
}

/// New track state from a first detection: corner positions from the box,
/// zero velocities, wide diagonal prior so early measurements dominate.
pub fn initiate(z: &BBox, cfg: &KalmanConfig) -> KalmanState {
    let mut x = StateVector::zeros();
    x[0] = z.x_tl;
    x[1] = z.y_tl;
    x[2] = z.x_br;
    x[3] = z.y_br;
    let mut p = StateMatrix::zeros();
    for i in 0..4 {
        p[(i, i)] = 10.0 * cfg.r_meas;
        p[(i + 4, i + 4)] = 100.0 * cfg.q_vel;
    }
    KalmanState { x, p }
}

/// Time update: coupled constant-velocity mean advance, `P <- F P F^T + Q`.
pub fn predict(state: &KalmanState, cfg: &KalmanConfig) -> KalmanState {
    let f = transition_matrix(cfg);
    let x = f * state.x;
    let mut p = f * state.p * f.transpose() + process_noise(cfg);
    symmetrize(&mut p);
    KalmanState { x, p }
}

/// Projects the state onto the measurement space: `z_hat = H x`,
/// `S = H P H^T + R` (the position block of P plus measurement noise).
pub fn project(state: &KalmanState, cfg: &KalmanConfig) -> MeasurementProjection {
    let z_hat = state.positions();
    let mut s = state.p.fixed_view::<4, 4>(0, 0).into_owned();
    for i in 0..4 {
        s[(i, i)] += cfg.r_meas;
    }
    MeasurementProjection { z_hat, s }
}

/// Measurement update with a detection or flow-propagated box.
///
/// Joseph-form covariance update keeps `P` symmetric positive semi-definite.
/// Fails with [`Error::SingularInnovation`] when the innovation covariance
/// cannot be inverted; callers drop the track.
pub fn update(state: &KalmanState, z: &BBox, cfg: &KalmanConfig) -> Result<KalmanState> {
    update_with_noise(state, z, &Vector4::repeat(cfg.r_meas))
}

/// [`update`] with an independent noise variance per measured corner
/// coordinate (order `x_tl, y_tl, x_br, y_br`).
///
/// Giving one axis a very large variance makes the update ignore that
/// coordinate: its gain goes to zero and its covariance keeps growing. This
/// is how a box truncated by a tile edge is folded in — the visible corners
/// still correct the state while the clipped ones carry no weight.
pub fn update_with_noise(state: &KalmanState, z: &BBox, r: &Vector4<f64>) -> Result<KalmanState> {
    let mut s = state.p.fixed_view::<4, 4>(0, 0).into_owned();
    for i in 0..4 {
        s[(i, i)] += r[i];
    }
    let s_chol = s.cholesky().ok_or(Error::SingularInnovation)?;

    // K = P H^T S^-1, with H the position selector: P H^T is the left 8x4
    // block of P.
    let ph_t = state.p.fixed_view::<8, 4>(0, 0).into_owned();
    let k = s_chol.solve(&ph_t.transpose()).transpose();

    let residual = measurement_vector(z) - state.positions();
    let x = state.x + k * residual;

    let mut i_kh = StateMatrix::identity();
    // KH zeroes out with H = [I4 | 0]: (KH)[i][j] = K[i][j] for j < 4.
    for i in 0..8 {
        for j in 0..4 {
            i_kh[(i, j)] -= k[(i, j)];
        }
    }
    let mut p = i_kh * state.p * i_kh.transpose() + k * Matrix4::from_diagonal(r) * k.transpose();
    symmetrize(&mut p);

    Ok(KalmanState { x, p })
}

/// Warps the full state through a camera-motion homography.
///
/// Corner positions map through the homography; velocities and covariance
/// transform by the homography's local Jacobian at each corner, so a pure
/// translation leaves velocities and `P` untouched.
pub fn apply_camera_motion(state: &KalmanState, h: &Homography) -> Result<KalmanState> {
    let tl = Point2::new(state.x[0], state.x[1]);
    let br = Point2::new(state.x[2], state.x[3]);
    let tl_w = h.apply(&tl)?;
    let br_w = h.apply(&br)?;
    let j_tl = h.jacobian_at(&tl)?;
    let j_br = h.jacobian_at(&br)?;

    let mut x = state.x;
    x[0] = tl_w.x;
    x[1] = tl_w.y;
    x[2] = br_w.x;
    x[3] = br_w.y;
    let v_tl = j_tl * nalgebra::Vector2::new(state.x[4], state.x[5]);
    let v_br = j_br * nalgebra::Vector2::new(state.x[6], state.x[7]);
    x[4] = v_tl.x;
    x[5] = v_tl.y;
    x[6] = v_br.x;
    x[7] = v_br.y;

    let mut j = StateMatrix::identity();
    let put = |j: &mut StateMatrix, at: usize, block: &Matrix2<f64>| {
        j[(at, at)] = block[(0, 0)];
        j[(at, at + 1)] = block[(0, 1)];
        j[(at + 1, at)] = block[(1, 0)];
        j[(at + 1, at + 1)] = block[(1, 1)];
    };
    put(&mut j, 0, &j_tl);
    put(&mut j, 2, &j_br);
    put(&mut j, 4, &j_tl);
    put(&mut j, 6, &j_br);

    let mut p = j * state.p * j.transpose();
    symmetrize(&mut p);
    Ok(KalmanState { x, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};

    fn boxed(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1)
    }

    fn min_eigenvalue(p: &StateMatrix) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(*p);
        eig.eigenvalues.min()
    }

    #[test]
    fn predict_zero_velocity_keeps_box_and_inflates_covariance() {
        let cfg = KalmanConfig::default();
        let state = initiate(&boxed(10.0, 20.0, 30.0, 40.0), &cfg);
        let next = predict(&state, &cfg);
        assert_eq!(next.positions(), state.positions());
        assert!(next.p.trace() > state.p.trace());
    }

    #[test]
    fn predict_coupled_rule_hand_values() {
        // lambda=0.6, dt=1, vx_tl=10, vx_br=0: tl advances 6, br advances 4.
        let cfg = KalmanConfig::default();
        let mut state = initiate(&boxed(0.0, 0.0, 10.0, 10.0), &cfg);
        state.x[4] = 10.0;
        let next = predict(&state, &cfg);
        assert_relative_eq!(next.x[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(next.x[2], 14.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_lambda_one_is_independent_constant_velocity() {
        let cfg = KalmanConfig {
            lambda: 1.0,
            ..KalmanConfig::default()
        };
        let mut state = initiate(&boxed(0.0, 0.0, 10.0, 10.0), &cfg);
        state.x[4] = 3.0;
        state.x[6] = -2.0;
        let next = predict(&state, &cfg);
        assert_relative_eq!(next.x[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(next.x[2], 8.0, epsilon = 1e-12);
        // F must match the classic block form exactly.
        let f = transition_matrix(&cfg);
        let mut classic = StateMatrix::identity();
        for i in 0..4 {
            classic[(i, i + 4)] = cfg.dt;
        }
        assert_eq!(f, classic);
    }

    #[test]
    fn predict_equal_velocities_preserve_width_for_any_lambda() {
        for lambda in [0.0, 0.25, 0.6, 1.0] {
            let cfg = KalmanConfig {
                lambda,
                ..KalmanConfig::default()
            };
            let mut state = initiate(&boxed(5.0, 5.0, 25.0, 15.0), &cfg);
            state.x[4] = 7.0;
            state.x[6] = 7.0;
            state.x[5] = -2.0;
            state.x[7] = -2.0;
            let next = predict(&state, &cfg);
            assert_relative_eq!(next.x[2] - next.x[0], 20.0, epsilon = 1e-9);
            assert_relative_eq!(next.x[3] - next.x[1], 10.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn update_with_projected_mean_leaves_mean_tightens_covariance() {
        let cfg = KalmanConfig::default();
        let state = initiate(&boxed(10.0, 20.0, 30.0, 40.0), &cfg);
        let next = update(&state, &boxed(10.0, 20.0, 30.0, 40.0), &cfg).unwrap();
        assert_relative_eq!(next.x, state.x, epsilon = 1e-12);
        assert!(next.p.trace() < state.p.trace());
    }

    #[test]
    fn update_scalar_gain_half() {
        // Position variance 1, r=1 -> gain 0.5; +2 residual moves mean by +1.
        let cfg = KalmanConfig {
            r_meas: 1.0,
            ..KalmanConfig::default()
        };
        let mut state = initiate(&boxed(0.0, 0.0, 10.0, 10.0), &cfg);
        state.p = StateMatrix::identity();
        let next = update(&state, &boxed(2.0, 0.0, 10.0, 10.0), &cfg).unwrap();
        assert_relative_eq!(next.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(next.x[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.x[2], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn repeated_updates_converge_to_measurement_riccati_limit() {
        // Static measurement, no predict in between: variance follows the
        // scalar recursion p' = p*r/(p+r), mean converges to z.
        let cfg = KalmanConfig {
            r_meas: 1.0,
            ..KalmanConfig::default()
        };
        let mut state = initiate(&boxed(0.0, 0.0, 10.0, 10.0), &cfg);
        let z = boxed(4.0, 4.0, 14.0, 14.0);
        let mut scalar_p = 10.0 * cfg.r_meas;
        let mut prev_var = f64::INFINITY;
        for _ in 0..2000 {
            state = update(&state, &z, &cfg).unwrap();
            scalar_p = scalar_p * cfg.r_meas / (scalar_p + cfg.r_meas);
            let var = state.p[(0, 0)];
            assert!(var < prev_var);
            assert_relative_eq!(var, scalar_p, epsilon = 1e-9);
            prev_var = var;
        }
        // Without predicts in between, the mean approaches z like p_k/p_0,
        // i.e. O(1/k); 2000 updates put it well inside 1e-3.
        assert_relative_eq!(state.x[0], 4.0, epsilon = 1e-3);
    }

    #[test]
    fn project_is_position_selector() {
        let cfg = KalmanConfig {
            r_meas: 1.0,
            ..KalmanConfig::default()
        };
        let mut state = initiate(&boxed(10.0, 20.0, 30.0, 40.0), &cfg);
        state.p = StateMatrix::identity();
        let proj = project(&state, &cfg);
        assert_eq!(proj.z_hat, Vector4::new(10.0, 20.0, 30.0, 40.0));
        assert_relative_eq!(proj.s, Matrix4::identity() * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn project_extracts_position_block_of_generic_covariance() {
        let cfg = KalmanConfig::default();
        let mut state = initiate(&boxed(0.0, 0.0, 1.0, 1.0), &cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = StateMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        state.p = a * a.transpose();
        let proj = project(&state, &cfg);
        for i in 0..4 {
            for j in 0..4 {
                let expect = state.p[(i, j)] + if i == j { cfg.r_meas } else { 0.0 };
                assert_relative_eq!(proj.s[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn camera_motion_identity_is_identity() {
        let cfg = KalmanConfig::default();
        let mut state = initiate(&boxed(10.0, 20.0, 30.0, 40.0), &cfg);
        state.x[4] = 1.5;
        let out = apply_camera_motion(&state, &Homography::identity()).unwrap();
        assert_eq!(out.x, state.x);
        assert_eq!(out.p, state.p);
    }

    #[test]
    fn camera_motion_translation_shifts_positions_only() {
        let cfg = KalmanConfig::default();
        let mut state = initiate(&boxed(10.0, 20.0, 30.0, 40.0), &cfg);
        state.x[4] = 2.0;
        state.x[7] = -1.0;
        let h = Homography::from_translation(5.0, 0.0);
        let out = apply_camera_motion(&state, &h).unwrap();
        assert_relative_eq!(out.x[0], 15.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[2], 35.0, epsilon = 1e-12);
        assert_eq!(out.velocities(), state.velocities());
        assert_relative_eq!(out.p, state.p, epsilon = 1e-12);
    }

    #[test]
    fn camera_motion_scale_doubles_velocities_quadruples_variance() {
        let cfg = KalmanConfig::default();
        let mut state = initiate(&boxed(1.0, 1.0, 2.0, 2.0), &cfg);
        state.x[4] = 3.0;
        let h = Homography::new(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let out = apply_camera_motion(&state, &h).unwrap();
        assert_relative_eq!(out.x[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[2], 4.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[4], 6.0, epsilon = 1e-12);
        for i in 0..8 {
            assert_relative_eq!(out.p[(i, i)], 4.0 * state.p[(i, i)], epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_noise_axis_is_ignored_and_keeps_its_uncertainty() {
        // Fresh state: diagonal P, so axes do not talk through correlations
        // and the masked axis must come through untouched.
        let cfg = KalmanConfig::default();
        let state = initiate(&boxed(100.0, 100.0, 200.0, 200.0), &cfg);
        // Bottom edge clipped 50 px short of truth; mark it uninformative.
        let z = boxed(104.0, 104.0, 204.0, 150.0);
        let r = Vector4::new(cfg.r_meas, cfg.r_meas, cfg.r_meas, 1e12);
        let out = update_with_noise(&state, &z, &r).unwrap();
        assert_relative_eq!(out.x[3], state.x[3], epsilon = 1e-6);
        assert!(out.p[(3, 3)] >= state.p[(3, 3)] - 1e-6);
        // The open axes still correct normally.
        assert!((out.x[0] - state.x[0]).abs() > 3.0);
        assert!(out.p[(0, 0)] < state.p[(0, 0)]);
        // With a uniform noise vector the masked form is the plain update.
        let a = update(&state, &z, &cfg).unwrap();
        let b = update_with_noise(&state, &z, &Vector4::repeat(cfg.r_meas)).unwrap();
        assert_relative_eq!(a.x, b.x, epsilon = 1e-12);
        assert_relative_eq!(a.p, b.p, epsilon = 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_psd_under_random_cycles() {
        let cfg = KalmanConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut state = initiate(&boxed(100.0, 100.0, 160.0, 140.0), &cfg);
        for _ in 0..2000 {
            state = predict(&state, &cfg);
            let z = boxed(
                state.x[0] + rng.gen_range(-3.0..3.0),
                state.x[1] + rng.gen_range(-3.0..3.0),
                state.x[2] + rng.gen_range(-3.0..3.0),
                state.x[3] + rng.gen_range(-3.0..3.0),
            );
            state = update(&state, &z, &cfg).unwrap();
            let asym = (state.p - state.p.transpose()).amax();
            assert!(asym <= 1e-9, "asymmetry {asym}");
            assert!(min_eigenvalue(&state.p) >= -1e-9);
        }
    }
}
