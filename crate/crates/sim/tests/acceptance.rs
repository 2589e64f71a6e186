//! End-to-end acceptance gate for the tracking and herding stack.
//!
//! Each test checks one release criterion and prints a single
//! `[PASS]`/`[FAIL]` line naming it, so a log scrape tells the whole story.

use std::time::Instant;

use itertools::Itertools;
use nalgebra::{DMatrix, Matrix2, Matrix3, Point2, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tembo_core::association::solve_assignment;
use tembo_core::flow::{FeatureMatcher, SampleSpec};
use tembo_core::geometry::{estimate_affine, estimate_homography, AffineTransform, Homography};
use tembo_core::kalman::{initiate, predict, transition_matrix, update, KalmanConfig, KalmanState};
use tembo_core::pipeline::{PipelineConfig, TrackStatus, TrackerPipeline};
use tembo_core::scheduler::{
    make_tiles, report_count, select_tile, Detection, Detector, SchedulerConfig,
};
use tembo_core::{BBox, PointMatch};
use tembo_sim::{evaluate_tracking, geofence_check, run_scenario, ScenarioConfig};

fn check(name: &str, run: impl FnOnce() -> Result<(), String>) {
    match run() {
        Ok(()) => println!("[PASS] {name}"),
        Err(msg) => {
            println!("[FAIL] {name}: {msg}");
            panic!("{name}: {msg}");
        }
    }
}

fn shipped_nominal() -> ScenarioConfig {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/nominal.toml");
    ScenarioConfig::load(&path).expect("shipped nominal scenario must load")
}

// --- small plumbing for pipeline-level criteria ---------------------------

/// Static world: every query point matches to itself.
struct IdentityMatcher;

impl FeatureMatcher for IdentityMatcher {
    type Frame = u64;

    fn match_points(
        &mut self,
        _prev: &u64,
        _cur: &u64,
        queries: &[Point2<f64>],
    ) -> Vec<Option<Point2<f64>>> {
        queries.iter().map(|&p| Some(p)).collect()
    }
}

/// Reports fixed frame-space boxes clipped to the scanned tile, in the
/// tile-local coordinates a real single-tile detector would emit.
struct FixedDetector {
    objects: Vec<BBox>,
}

impl Detector for FixedDetector {
    type Frame = u64;

    fn detect(&mut self, _frame: &u64, tile: &BBox) -> Vec<Detection> {
        self.objects
            .iter()
            .filter_map(|o| o.intersection(tile))
            .map(|c| Detection {
                bbox: BBox::new(
                    c.x_tl - tile.x_tl,
                    c.y_tl - tile.y_tl,
                    c.x_br - tile.x_tl,
                    c.y_br - tile.y_tl,
                ),
                class_id: 0,
                confidence: 0.9,
            })
            .collect()
    }
}

struct EmptyDetector;

impl Detector for EmptyDetector {
    type Frame = u64;

    fn detect(&mut self, _frame: &u64, _tile: &BBox) -> Vec<Detection> {
        Vec::new()
    }
}

// --- 1: assignment optimality ----------------------------------------------

#[test]
fn assignment_matches_exhaustive_oracle() {
    check("assignment matches exhaustive oracle on random matrices", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6usize {
            for case in 0..1000 {
                let cost =
                    DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..100.0_f64));
                let pairs = solve_assignment(&cost, 1e6);
                if pairs.len() != n {
                    return Err(format!("n={n} case={case}: {} pairs", pairs.len()));
                }
                let got: f64 = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
                let best = (0..n)
                    .permutations(n)
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                if got != best {
                    return Err(format!("n={n} case={case}: got {got}, optimum {best}"));
                }
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        if elapsed >= 10.0 {
            return Err(format!("took {elapsed:.1} s, budget 10 s"));
        }
        Ok(())
    });
}

// --- 2: filter equivalence with independent scalar filters -----------------

/// Two-state (position, velocity) filter with a scalar position measurement;
/// the reference each corner coordinate must agree with when corner coupling
/// is off.
#[derive(Clone, Copy)]
struct PosVelFilter {
    x: [f64; 2],
    p: [[f64; 2]; 2],
}

impl PosVelFilter {
    fn predict(&mut self, dt: f64, q_pos: f64, q_vel: f64) {
        let p = self.p;
        self.x = [self.x[0] + dt * self.x[1], self.x[1]];
        self.p = [
            [
                p[0][0] + dt * (p[0][1] + p[1][0]) + dt * dt * p[1][1] + q_pos,
                p[0][1] + dt * p[1][1],
            ],
            [p[1][0] + dt * p[1][1], p[1][1] + q_vel],
        ];
    }

    fn update(&mut self, z: f64, r: f64) {
        let s = self.p[0][0] + r;
        let k = [self.p[0][0] / s, self.p[1][0] / s];
        let y = z - self.x[0];
        self.x = [self.x[0] + k[0] * y, self.x[1] + k[1] * y];
        // Joseph form with H = [1, 0]: A = I - K H = [[1-k0, 0], [-k1, 1]].
        let a0 = 1.0 - k[0];
        let p = self.p;
        let m = [
            [a0 * p[0][0], a0 * p[0][1]],
            [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
        ];
        self.p = [
            [
                m[0][0] * a0 + k[0] * r * k[0],
                -m[0][0] * k[1] + m[0][1] + k[0] * r * k[1],
            ],
            [
                m[1][0] * a0 + k[1] * r * k[0],
                -m[1][0] * k[1] + m[1][1] + k[1] * r * k[1],
            ],
        ];
    }
}

#[test]
fn filter_agrees_with_scalar_oracles() {
    check("box filter equals four independent scalar filters", || {
        let cfg = KalmanConfig {
            lambda: 1.0,
            ..KalmanConfig::default()
        };
        let nominal = [100.0, 120.0, 400.0, 360.0];
        let mut state = initiate(
            &BBox::new(nominal[0], nominal[1], nominal[2], nominal[3]),
            &cfg,
        );
        let mut oracles: Vec<PosVelFilter> = (0..4)
            .map(|i| PosVelFilter {
                x: [nominal[i], 0.0],
                p: [[10.0 * cfg.r_meas, 0.0], [0.0, 100.0 * cfg.q_vel]],
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);

        for cycle in 0..10_000 {
            state = predict(&state, &cfg);
            for o in oracles.iter_mut() {
                o.predict(cfg.dt, cfg.q_pos, cfg.q_vel);
            }
            // Measurements stay pinned near the nominal box so the corner
            // order can never flip.
            let z: Vec<f64> = (0..4)
                .map(|i| nominal[i] + rng.gen_range(-3.0..3.0))
                .collect();
            state = update(&state, &BBox::new(z[0], z[1], z[2], z[3]), &cfg)
                .map_err(|e| format!("cycle {cycle}: {e}"))?;
            for (i, o) in oracles.iter_mut().enumerate() {
                o.update(z[i], cfg.r_meas);
            }

            for (i, o) in oracles.iter().enumerate() {
                let diffs = [
                    (state.x[i] - o.x[0]).abs(),
                    (state.x[i + 4] - o.x[1]).abs(),
                    (state.p[(i, i)] - o.p[0][0]).abs(),
                    (state.p[(i, i + 4)] - o.p[0][1]).abs(),
                    (state.p[(i + 4, i + 4)] - o.p[1][1]).abs(),
                ];
                let worst = diffs.iter().cloned().fold(0.0, f64::max);
                if worst > 1e-9 {
                    return Err(format!("cycle {cycle} coord {i}: divergence {worst:.2e}"));
                }
            }

            let asym = (state.p - state.p.transpose()).amax();
            if asym > 1e-9 {
                return Err(format!("cycle {cycle}: asymmetry {asym:.2e}"));
            }
            let min_eig = state
                .p
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-9 {
                return Err(format!("cycle {cycle}: covariance not PSD ({min_eig:.2e})"));
            }
        }
        Ok(())
    });
}

// --- 3: coupled prediction degenerates and preserves size -------------------

#[test]
fn coupling_degenerates_to_classic_model_and_preserves_width() {
    check(
        "full coupling weight is classic constant-velocity; equal velocities keep size",
        || {
            let cfg = KalmanConfig {
                lambda: 1.0,
                ..KalmanConfig::default()
            };
            let f = transition_matrix(&cfg);
            let mut f_indep = SMatrix::<f64, 8, 8>::identity();
            for i in 0..4 {
                f_indep[(i, i + 4)] = cfg.dt;
            }
            if f != f_indep {
                return Err("transition at full weight differs from the classic model".into());
            }

            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for lambda in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
                let cfg = KalmanConfig {
                    lambda,
                    ..KalmanConfig::default()
                };
                for _ in 0..50 {
                    let x0 = rng.gen_range(0.0..500.0);
                    let y0 = rng.gen_range(0.0..500.0);
                    let w = rng.gen_range(10.0..300.0);
                    let h = rng.gen_range(10.0..300.0);
                    let vx = rng.gen_range(-5.0..5.0);
                    let vy = rng.gen_range(-5.0..5.0);
                    let mut x = nalgebra::SVector::<f64, 8>::zeros();
                    x[0] = x0;
                    x[1] = y0;
                    x[2] = x0 + w;
                    x[3] = y0 + h;
                    x[4] = vx;
                    x[5] = vy;
                    x[6] = vx;
                    x[7] = vy;
                    let mut state = KalmanState {
                        x,
                        p: SMatrix::identity(),
                    };
                    for _ in 0..100 {
                        state = predict(&state, &cfg);
                        let bw = state.x[2] - state.x[0];
                        let bh = state.x[3] - state.x[1];
                        if (bw - w).abs() > 1e-9 || (bh - h).abs() > 1e-9 {
                            return Err(format!(
                                "lambda {lambda}: size drifted by ({:.2e}, {:.2e})",
                                bw - w,
                                bh - h
                            ));
                        }
                    }
                }
            }
            Ok(())
        },
    );
}

// --- 4: transform recovery ---------------------------------------------------

#[test]
fn transform_estimators_recover_generators() {
    check("affine and homography estimators recover generating transforms", || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sample_pts = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Point2<f64>> {
            (0..n)
                .map(|_| Point2::new(rng.gen_range(0.0..1280.0), rng.gen_range(0.0..720.0)))
                .collect()
        };

        for case in 0..1000 {
            // Rotation times anisotropic scale keeps the conditioning tame.
            let theta: f64 = rng.gen_range(-3.1..3.1);
            let (s1, s2) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let linear = Matrix2::new(
                theta.cos() * s1,
                -theta.sin() * s2,
                theta.sin() * s1,
                theta.cos() * s2,
            );
            let t = Vector2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let truth = AffineTransform::new(linear, t);
            let matches: Vec<PointMatch> = sample_pts(&mut rng, 12)
                .into_iter()
                .map(|p| PointMatch::new(p, truth.apply(&p)))
                .collect();
            let est = estimate_affine(&matches).map_err(|e| format!("affine {case}: {e}"))?;
            for p in sample_pts(&mut rng, 5) {
                let err = (est.apply(&p) - truth.apply(&p)).norm();
                if err > 1e-6 {
                    return Err(format!("affine {case}: held-out error {err:.2e}"));
                }
            }

            let m = Matrix3::new(
                linear[(0, 0)],
                linear[(0, 1)],
                t.x,
                linear[(1, 0)],
                linear[(1, 1)],
                t.y,
                rng.gen_range(-1e-4..1e-4),
                rng.gen_range(-1e-4..1e-4),
                1.0,
            );
            let truth_h = Homography::new(m).map_err(|e| format!("homography {case}: {e}"))?;
            let matches: Vec<PointMatch> = sample_pts(&mut rng, 12)
                .into_iter()
                .map(|p| PointMatch::new(p, truth_h.apply(&p).unwrap()))
                .collect();
            let est =
                estimate_homography(&matches).map_err(|e| format!("homography {case}: {e}"))?;
            for p in sample_pts(&mut rng, 5) {
                let err = (est.apply(&p).unwrap() - truth_h.apply(&p).unwrap()).norm();
                if err > 1e-6 {
                    return Err(format!("homography {case}: held-out error {err:.2e}"));
                }
            }
        }
        Ok(())
    });
}

// --- 5: scheduler fairness and cadence --------------------------------------

#[test]
fn scheduler_is_starvation_free_and_detector_cadence_holds() {
    check("tile scan gaps stay bounded; detector fires on its cadence", || {
        let cfg = SchedulerConfig::default();
        let mut grid = make_tiles(1280, 720, 3, 2, 0.25).map_err(|e| e.to_string())?;
        let n_tiles = grid.tiles.len();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut last_selected = vec![0i64; n_tiles];
        let mut window_max = vec![0usize; n_tiles];
        for slot in 0..10_000i64 {
            let max_count = grid.tiles.iter().map(|t| t.last_count).max().unwrap();
            for m in window_max.iter_mut() {
                *m = (*m).max(max_count);
            }
            let idx = select_tile(&mut grid, &cfg);
            let gap = slot - last_selected[idx];
            let bound =
                (window_max[idx] as f64 / cfg.age_weight).ceil() as i64 + n_tiles as i64;
            if gap > bound {
                return Err(format!("slot {slot}: tile {idx} waited {gap} > {bound}"));
            }
            last_selected[idx] = slot;
            window_max[idx] = 0;
            report_count(&mut grid, idx, rng.gen_range(0..12));
        }

        let mut pipeline =
            TrackerPipeline::new(PipelineConfig::default(), IdentityMatcher, EmptyDetector)
                .map_err(|e| e.to_string())?;
        let mut ran = Vec::new();
        for f in 1..=31u64 {
            let r = pipeline.step(&(f - 1), &f, f).map_err(|e| e.to_string())?;
            if r.detector_ran {
                ran.push(f);
            }
        }
        let expected: Vec<u64> = (1..=31).step_by(3).collect();
        if ran != expected {
            return Err(format!("detector frames {ran:?}, expected {expected:?}"));
        }
        Ok(())
    });
}

// --- 6: closed-loop herding quality ------------------------------------------

#[test]
fn nominal_mission_matches_reference_trajectory() {
    check("nominal mission stays on the reference trajectory", || {
        let started = Instant::now();
        let artifacts = run_scenario(&shipped_nominal()).map_err(|e| e.to_string())?;
        let elapsed = started.elapsed().as_secs_f64();
        let match_frac = artifacts.report.trajectory_match;
        if match_frac < 0.80 {
            return Err(format!("trajectory match {match_frac:.3} < 0.80"));
        }
        if elapsed >= 60.0 {
            return Err(format!("run took {elapsed:.1} s, budget 60 s"));
        }
        Ok(())
    });
}

// --- 7: tracking quality over the servo phases -------------------------------

#[test]
fn tracking_holds_lock_through_servo_phases() {
    check("tracking holds overlap and identity through the servo phases", || {
        let artifacts = run_scenario(&shipped_nominal()).map_err(|e| e.to_string())?;
        let metrics = evaluate_tracking(&artifacts.tracks_jsonl, &artifacts.gt_jsonl)
            .map_err(|e| e.to_string())?;
        if metrics.frames_evaluated == 0 {
            return Err("no frames evaluated".into());
        }
        if metrics.iou_ge_05_fraction < 0.90 {
            return Err(format!(
                "IOU >= 0.5 on only {:.1}% of frames",
                100.0 * metrics.iou_ge_05_fraction
            ));
        }
        if metrics.id_switches > 1 {
            return Err(format!("{} identity switches", metrics.id_switches));
        }
        Ok(())
    });
}

// --- 8: tracker-path throughput ----------------------------------------------

#[test]
fn tracker_path_sustains_frame_rate() {
    check("tracker path sustains 32 frames per second", || {
        let mut cfg = PipelineConfig::default();
        cfg.sample = SampleSpec {
            density: 1.0,
            min_points: 10,
        };
        // Ten small targets spread across the frame, clear of tile seams.
        let mut objects = Vec::new();
        for (i, &x) in [60.0, 180.0, 600.0, 1000.0, 1120.0].iter().enumerate() {
            for (j, &y) in [100.0, 500.0].iter().enumerate() {
                let _ = (i, j);
                objects.push(BBox::new(x, y, x + 40.0, y + 40.0));
            }
        }
        let mut pipeline = TrackerPipeline::new(cfg, IdentityMatcher, FixedDetector { objects })
            .map_err(|e| e.to_string())?;

        let mut frame = 0u64;
        for _ in 0..90 {
            frame += 1;
            pipeline
                .step(&(frame - 1), &frame, frame)
                .map_err(|e| e.to_string())?;
        }
        let confirmed = pipeline
            .tracks()
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .count();
        if confirmed != 10 {
            return Err(format!("warmup confirmed {confirmed} tracks, wanted 10"));
        }

        let timed_frames = 1500u64;
        let started = Instant::now();
        for _ in 0..timed_frames {
            frame += 1;
            pipeline
                .step(&(frame - 1), &frame, frame)
                .map_err(|e| e.to_string())?;
        }
        let fps = timed_frames as f64 / started.elapsed().as_secs_f64();
        if fps < 32.0 {
            return Err(format!("{fps:.1} frames/s < 32"));
        }
        Ok(())
    });
}

// --- 9: determinism ------------------------------------------------------------

#[test]
fn same_seed_runs_are_byte_identical() {
    check("same-seed runs emit byte-identical artifacts", || {
        let mut cfg = shipped_nominal();
        cfg.frames = 400;
        let a = run_scenario(&cfg).map_err(|e| e.to_string())?;
        let b = run_scenario(&cfg).map_err(|e| e.to_string())?;
        if a.trajectory_csv != b.trajectory_csv {
            return Err("trajectory files differ".into());
        }
        if a.tracks_jsonl != b.tracks_jsonl {
            return Err("track files differ".into());
        }
        if a.commands_jsonl != b.commands_jsonl {
            return Err("command files differ".into());
        }
        Ok(())
    });
}

// --- 10: geofence wake-up -------------------------------------------------------

#[test]
fn geofence_wakes_exactly_inside_radius() {
    check("geofence wakes exactly on planar distance, monotonically", || {
        let radius = 60.0;
        let base = Vector3::new(0.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut samples: Vec<(f64, bool)> = Vec::with_capacity(10_000);
        for case in 0..10_000 {
            let p = Vector3::new(
                rng.gen_range(-130.0..130.0),
                rng.gen_range(-130.0..130.0),
                rng.gen_range(0.0..4.0),
            );
            let awake = geofence_check(&p, &base, radius);
            let planar = (p.x * p.x + p.y * p.y).sqrt();
            if awake != (planar <= radius) {
                return Err(format!(
                    "case {case}: awake={awake} at planar distance {planar:.3}"
                ));
            }
            samples.push((planar, awake));
        }
        // Exactly on the fence counts as inside, regardless of height.
        if !geofence_check(&Vector3::new(radius, 0.0, 3.0), &base, radius) {
            return Err("boundary placement did not wake".into());
        }
        // Monotone: walking outward never turns the tag back on.
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut seen_asleep = false;
        for &(d, awake) in &samples {
            if awake && seen_asleep {
                return Err(format!("awake at {d:.3} after asleep at a shorter distance"));
            }
            if !awake {
                seen_asleep = true;
            }
        }
        Ok(())
    });
}
