//! Acceptance gate: ten end-to-end criteria, one pass/fail line each.
//!
//! Run with `cargo test -p uavtraj-cli --test acceptance -- --nocapture` to
//! see the lines; any failing criterion fails its test.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix6, Point3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uavtraj::camera::CameraIntrinsics;
use uavtraj::classification::{vote_clip, ClipLabel, FrameLabel, LabelStatus};
use uavtraj::config::PipelineConfig;
use uavtraj::filtering::{run_filter, FilterParams};
use uavtraj::fusion::fuse_sequence;
use uavtraj::pipeline::run_pipeline;
use uavtraj::refine::{observe, refine_observations, FilterState, NoiseConfig, Trajectory3D};
use uavtraj::sim::{
    e3d, filter_fixture, generate, observations_from_expert, sweep, MotionModel, NoiseSpec,
    Scenario,
};
use uavtraj::smoothing::{fit_bspline, smooth_trajectory, Trajectory2D};

const JACOBIAN_TOL: f64 = 1e-4;
const E2E_TOL_M: f64 = 1e-2;
const DEPTH_MAE_REDUCTION: f64 = 0.20;
const POLY_TOL: f64 = 1e-6;
const METRIC_TOL: f64 = 1e-12;

type CheckResult = Result<(), String>;

fn check(n: usize, budget: Duration, desc: &str, f: impl FnOnce() -> CheckResult + UnwindSafe) {
    let start = Instant::now();
    let outcome = catch_unwind(f);
    let elapsed = start.elapsed();
    match outcome {
        Ok(Ok(())) if elapsed <= budget => {
            println!("criterion {n}: PASS — {desc} ({elapsed:.2?})");
        }
        Ok(Ok(())) => {
            println!(
                "criterion {n}: FAIL — {desc} (overran budget: {elapsed:.2?} > {budget:.2?})"
            );
            panic!("criterion {n} exceeded its runtime budget");
        }
        Ok(Err(msg)) => {
            println!("criterion {n}: FAIL — {desc}: {msg}");
            panic!("criterion {n} failed: {msg}");
        }
        Err(payload) => {
            println!("criterion {n}: FAIL — {desc} (panicked)");
            resume_unwind(payload);
        }
    }
}

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(1000.0, 1000.0, 640.0, 360.0).unwrap()
}

fn constant_velocity(
    start: [f64; 3],
    velocity: [f64; 3],
    duration: u64,
    noise: NoiseSpec,
    experts: usize,
    seed: u64,
) -> Scenario {
    Scenario {
        motion: MotionModel::ConstantVelocity { start, velocity },
        duration,
        frame_rate: 30.0,
        intrinsics: intrinsics(),
        h_real: 0.5,
        noise,
        experts,
        seed,
        process_noise_scale: None,
        outlier_expert: None,
        p_miss_overrides: None,
        label: "uav".into(),
    }
}

const NO_NOISE: NoiseSpec = NoiseSpec {
    sigma_uv: 0.0,
    sigma_h: 0.0,
    p_miss: 0.0,
};

const BASE_NOISE: NoiseSpec = NoiseSpec {
    sigma_uv: 0.5,
    sigma_h: 5.0,
    p_miss: 0.0,
};

#[test]
fn criterion_01_jacobian_matches_finite_differences() {
    check(
        1,
        Duration::from_secs(1),
        "analytic observation Jacobian vs central differences over 1000 states",
        || {
            let k = intrinsics();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let mean = Vector6::from_row_slice(&[
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(1.0..100.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ]);
                let state = FilterState {
                    mean,
                    covariance: Matrix6::identity(),
                };
                let (_, jac) = observe(&state, &k, 0.5).map_err(|e| e.to_string())?;
                for col in 0..6 {
                    let h = 1e-6 * mean[col].abs().max(1.0);
                    let mut hi = state.clone();
                    hi.mean[col] += h;
                    let mut lo = state.clone();
                    lo.mean[col] -= h;
                    let (f_hi, _) = observe(&hi, &k, 0.5).map_err(|e| e.to_string())?;
                    let (f_lo, _) = observe(&lo, &k, 0.5).map_err(|e| e.to_string())?;
                    for row in 0..3 {
                        let fd = (f_hi[row] - f_lo[row]) / (2.0 * h);
                        let a = jac[(row, col)];
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                        worst = worst.max(rel);
                    }
                }
            }
            if worst >= JACOBIAN_TOL {
                return Err(format!("max relative error {worst:.2e} >= {JACOBIAN_TOL:.0e}"));
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_02_noise_free_pipeline_recovers_truth() {
    check(
        2,
        Duration::from_secs(5),
        "zero-noise 300-frame pipeline position error < 1e-2 m at every frame",
        || {
            let scn = constant_velocity([0.5, -0.3, 5.0], [0.3, 0.2, 0.05], 300, NO_NOISE, 3, 11);
            let (truth, dets, labels, _) = generate(&scn).map_err(|e| e.to_string())?;
            let mut cfg = PipelineConfig::default();
            cfg.intrinsics = Some(scn.intrinsics.clone());
            cfg.size_priors.insert("uav".into(), 0.5);
            let grouped = BTreeMap::from([("sim".to_string(), dets)]);
            let out = run_pipeline(&grouped, None, &labels, &cfg, true).map_err(|e| e.to_string())?;
            let traj = &out.traj3d["sim"];
            if traj.frames.len() != 300 {
                return Err(format!("expected 300 frames, got {}", traj.frames.len()));
            }
            for ((f, p), t) in traj.frames.iter().zip(&traj.positions).zip(&truth.positions) {
                let err = (p - t).norm();
                if err >= E2E_TOL_M {
                    return Err(format!("frame {f}: position error {err:.4} m >= {E2E_TOL_M}"));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_03_refinement_beats_raw_depth() {
    check(
        3,
        Duration::from_secs(30),
        "refined depth MAE at least 20% below raw size-prior depth over 10 seeds",
        || {
            let cfg = NoiseConfig::new(1.0, 1.0, 1.0 / 30.0, 0.5).map_err(|e| e.to_string())?;
            let mut raw_sum = 0.0;
            let mut refined_sum = 0.0;
            for seed in 0..10u64 {
                let scn = constant_velocity(
                    [0.5, -0.3, 8.0],
                    [0.2, 0.1, 0.1],
                    300,
                    BASE_NOISE,
                    1,
                    100 + seed,
                );
                let (truth, dets, _, _) = generate(&scn).map_err(|e| e.to_string())?;
                let obs = observations_from_expert(&dets, "e0");
                let traj =
                    refine_observations(&obs, &scn.intrinsics, &cfg, None).map_err(|e| e.to_string())?;
                let truth_z: BTreeMap<u64, f64> = truth
                    .frames
                    .iter()
                    .copied()
                    .zip(truth.positions.iter().map(|p| p.z))
                    .collect();
                let mut raw_mae = 0.0;
                let mut refined_mae = 0.0;
                let mut n = 0usize;
                for ((f, p), raw) in traj
                    .frames
                    .iter()
                    .zip(&traj.positions)
                    .zip(&traj.raw_depths)
                {
                    if let Some(raw_z) = raw {
                        let z_true = truth_z[f];
                        raw_mae += (raw_z - z_true).abs();
                        refined_mae += (p.z - z_true).abs();
                        n += 1;
                    }
                }
                raw_sum += raw_mae / n as f64;
                refined_sum += refined_mae / n as f64;
            }
            let reduction = 1.0 - refined_sum / raw_sum;
            if reduction < DEPTH_MAE_REDUCTION {
                return Err(format!(
                    "depth MAE reduction {:.1}% < {:.0}% (raw {:.3} m, refined {:.3} m)",
                    reduction * 100.0,
                    DEPTH_MAE_REDUCTION * 100.0,
                    raw_sum / 10.0,
                    refined_sum / 10.0
                ));
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_04_matched_noise_sweep_optimum() {
    check(
        4,
        Duration::from_secs(120),
        "matched-noise sweep: depth error at (1,1) <= all four grid corners",
        || {
            let mut scn = constant_velocity(
                [3.0, 1.5, 15.0],
                [0.1, 0.05, 0.0],
                60,
                BASE_NOISE,
                1,
                7,
            );
            scn.process_noise_scale = Some(1.0);
            let gammas = [0.5, 0.8, 1.0, 1.5, 2.0];
            let grid: Vec<(f64, f64)> = gammas
                .iter()
                .flat_map(|&q| gammas.iter().map(move |&r| (q, r)))
                .collect();
            let rows = sweep(&scn, &grid, 5).map_err(|e| e.to_string())?;
            let cell = |q: f64, r: f64| {
                rows.iter()
                    .find(|row| (row.gamma_q_z, row.gamma_r_h) == (q, r))
                    .map(|row| row.depth_error)
                    .ok_or_else(|| format!("missing grid cell ({q}, {r})"))
            };
            let center = cell(1.0, 1.0)?;
            for corner in [(0.5, 0.5), (0.5, 2.0), (2.0, 0.5), (2.0, 2.0)] {
                let err = cell(corner.0, corner.1)?;
                if center > err {
                    return Err(format!(
                        "center {center:.4} m > corner {corner:?} {err:.4} m"
                    ));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_05_consensus_rejects_outliers_and_singletons() {
    check(
        5,
        Duration::from_secs(5),
        "outlier expert never fused over 1000 frames; single expert yields nothing",
        || {
            let mut scn = constant_velocity([0.5, -0.3, 8.0], [0.1, 0.05, 0.0], 1000, NO_NOISE, 3, 21);
            scn.outlier_expert = Some(2);
            let (_, dets, _, _) = generate(&scn).map_err(|e| e.to_string())?;
            let outlier_centers: BTreeMap<u64, (f64, f64)> = dets
                .iter()
                .filter(|d| d.expert_id == "e2")
                .map(|d| (d.frame, (d.bbox.x, d.bbox.y)))
                .collect();
            let fused = fuse_sequence(&dets, 0.5).map_err(|e| e.to_string())?;
            if fused.len() != 1000 {
                return Err(format!("expected 1000 fused frames, got {}", fused.len()));
            }
            for (frame, obs) in &fused {
                if obs.experts.iter().any(|e| e == "e2") {
                    return Err(format!("frame {frame}: outlier expert fused"));
                }
                let (ox, oy) = outlier_centers[frame];
                let (l, t, r, b) = obs.bbox.corners();
                if ox >= l && ox <= r && oy >= t && oy <= b {
                    return Err(format!("frame {frame}: fused box contains the outlier center"));
                }
            }

            let solo = constant_velocity([0.5, -0.3, 8.0], [0.1, 0.05, 0.0], 1000, NO_NOISE, 1, 22);
            let (_, dets, _, _) = generate(&solo).map_err(|e| e.to_string())?;
            let fused = fuse_sequence(&dets, 0.5).map_err(|e| e.to_string())?;
            if !fused.is_empty() {
                return Err(format!(
                    "single-expert input produced {} fused observations",
                    fused.len()
                ));
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_06_filter_fixture_stage_counts() {
    check(
        6,
        Duration::from_secs(1),
        "constructed 200-clip fixture: exactly 130 pass visibility, 50 pass both",
        || {
            let (records, manifest) = filter_fixture(42);
            let params = FilterParams::default();
            let verdicts = run_filter(&records, &manifest, &params);
            if verdicts.len() != 200 {
                return Err(format!("expected 200 clip verdicts, got {}", verdicts.len()));
            }
            let visibility = verdicts
                .iter()
                .filter(|v| v.passes_visibility(params.rel_thresh))
                .count();
            let accepted = verdicts
                .iter()
                .filter(|v| v.decision == uavtraj::filtering::Decision::Accept)
                .count();
            if visibility != 130 {
                return Err(format!("visibility stage kept {visibility} clips, expected 130"));
            }
            if accepted != 50 {
                return Err(format!("both stages kept {accepted} clips, expected 50"));
            }
            Ok(())
        },
    );
}

fn vote_oracle(labels: &[FrameLabel], n: usize, rho: f64) -> ClipLabel {
    let mut sorted: Vec<&FrameLabel> = labels.iter().collect();
    sorted.sort_by_key(|l| l.frame);

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &sorted {
        *counts.entry(&l.label).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap();
    let dominant = counts
        .iter()
        .filter(|(_, &c)| c == max)
        .map(|(&l, _)| l)
        .min()
        .unwrap()
        .to_string();

    let mut best_agreement = -1.0;
    let mut best_window: Option<&[&FrameLabel]> = None;
    if sorted.len() >= n {
        for window in sorted.windows(n) {
            let hits = window.iter().filter(|l| l.label == dominant).count();
            let agreement = hits as f64 / n as f64;
            if agreement > best_agreement {
                best_agreement = agreement;
                best_window = Some(window);
            }
        }
    } else {
        best_agreement = max as f64 / sorted.len() as f64;
    }

    let (status, confidence) = match best_window {
        Some(window) if best_agreement >= rho => {
            let mean = window.iter().map(|l| l.confidence).sum::<f64>() / window.len() as f64;
            (LabelStatus::Confirmed, mean.max(best_agreement))
        }
        _ => {
            let dom: Vec<_> = sorted.iter().filter(|l| l.label == dominant).collect();
            let mean = dom.iter().map(|l| l.confidence).sum::<f64>() / dom.len() as f64;
            (LabelStatus::Uncertain, mean)
        }
    };
    ClipLabel {
        clip_id: sorted[0].clip_id.clone(),
        label: dominant,
        confidence,
        status,
        agreement: best_agreement,
    }
}

#[test]
fn criterion_07_voting_rules() {
    check(
        7,
        Duration::from_secs(10),
        "ρ/N voting edge cases plus 10000-sequence oracle agreement",
        || {
            let seq = |labels: &[&str]| -> Vec<FrameLabel> {
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &label)| FrameLabel {
                        clip_id: "c".into(),
                        frame: i as u64,
                        label: label.to_string(),
                        confidence: 0.9,
                    })
                    .collect()
            };

            let mixed = vote_clip(&seq(&["a", "a", "a", "b", "b"]), 5, 0.9)
                .map_err(|e| e.to_string())?;
            if mixed.status != LabelStatus::Uncertain {
                return Err("[a,a,a,b,b] with N=5, ρ=0.9 was not uncertain".into());
            }
            let unanimous = vote_clip(&seq(&["a", "a", "a", "a", "a"]), 5, 0.9)
                .map_err(|e| e.to_string())?;
            if unanimous.status != LabelStatus::Confirmed {
                return Err("unanimous window was not confirmed".into());
            }

            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let alphabet = ["a", "b", "c"];
            for case in 0..10_000 {
                let len = rng.random_range(1..=20usize);
                let rho = [0.6, 0.8, 0.9, 1.0][rng.random_range(0..4usize)];
                let labels: Vec<FrameLabel> = (0..len)
                    .map(|i| FrameLabel {
                        clip_id: "c".into(),
                        frame: i as u64,
                        label: alphabet[rng.random_range(0..3usize)].to_string(),
                        confidence: rng.random_range(0.0..1.0),
                    })
                    .collect();
                let got = vote_clip(&labels, 5, rho).map_err(|e| e.to_string())?;
                let want = vote_oracle(&labels, 5, rho);
                let agree = got.label == want.label
                    && got.status == want.status
                    && (got.agreement - want.agreement).abs() < METRIC_TOL
                    && (got.confidence - want.confidence).abs() < METRIC_TOL;
                if !agree {
                    return Err(format!(
                        "case {case}: vote {got:?} disagrees with oracle {want:?}"
                    ));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_08_metric_identities() {
    check(
        8,
        Duration::from_secs(1),
        "e3d identities, exact offset value, and double-loop oracle",
        || {
            let mk = |points: &[[f64; 3]]| Trajectory3D {
                frames: (0..points.len() as u64).collect(),
                positions: points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
                velocities: vec![Vector3::zeros(); points.len()],
                raw_depths: vec![None; points.len()],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let random = |rng: &mut ChaCha8Rng, n: usize| -> Vec<[f64; 3]> {
                (0..n)
                    .map(|_| {
                        [
                            rng.random_range(-50.0..50.0),
                            rng.random_range(-50.0..50.0),
                            rng.random_range(-50.0..50.0),
                        ]
                    })
                    .collect()
            };

            let a = mk(&random(&mut rng, 40));
            let self_metrics = e3d(&a, &a).map_err(|e| e.to_string())?;
            if self_metrics.e3d != 0.0 || self_metrics.rmse != 0.0 {
                return Err("identical trajectories did not give zero metrics".into());
            }

            let single = e3d(&mk(&[[0.0; 3]]), &mk(&[[0.3, 0.0, 0.0]])).map_err(|e| e.to_string())?;
            if single.e3d != 0.3 * 0.3 || single.d_x != 0.3 || single.d_y != 0.0 || single.d_z != 0.0
            {
                return Err(format!(
                    "single-frame (0.3,0,0) offset gave e3d={} d=({},{},{})",
                    single.e3d, single.d_x, single.d_y, single.d_z
                ));
            }
            let base = vec![[0.0; 3]; 25];
            let shifted = vec![[0.3, 0.0, 0.0]; 25];
            let offset = e3d(&mk(&base), &mk(&shifted)).map_err(|e| e.to_string())?;
            if (offset.e3d - 0.09).abs() > METRIC_TOL || (offset.d_x - 0.3).abs() > METRIC_TOL {
                return Err(format!(
                    "25-frame (0.3,0,0) offset gave e3d={} d_x={}",
                    offset.e3d, offset.d_x
                ));
            }

            for _ in 0..50 {
                let n = rng.random_range(1..80usize);
                let pa = random(&mut rng, n);
                let pb = random(&mut rng, n);
                let m = e3d(&mk(&pa), &mk(&pb)).map_err(|e| e.to_string())?;
                let mut sum_sq = 0.0;
                for (x, y) in pa.iter().zip(&pb) {
                    for axis in 0..3 {
                        let d = x[axis] - y[axis];
                        sum_sq += d * d;
                    }
                }
                let oracle = sum_sq / n as f64;
                if (m.e3d - oracle).abs() > METRIC_TOL * oracle.max(1.0) {
                    return Err(format!("e3d {} disagrees with oracle {oracle}", m.e3d));
                }
                if (m.rmse * m.rmse - m.e3d).abs() > METRIC_TOL * m.e3d.max(1.0) {
                    return Err("rmse² != e3d".into());
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_09_spline_reproduction_and_noise_reduction() {
    check(
        9,
        Duration::from_secs(5),
        "degree ≤ 3 polynomial reproduction within 1e-6 and jitter reduction over 20 seeds",
        || {
            let polys: [(&str, fn(f64) -> f64); 3] = [
                ("linear", |t| 4.0 - 0.5 * t),
                ("quadratic", |t| 1.0 + 0.3 * t - 0.01 * t * t),
                ("cubic", |t| 2.0 - 0.2 * t + 0.02 * t * t - 0.0004 * t * t * t),
            ];
            for (name, poly) in polys {
                let samples: Vec<(f64, f64)> = (0..60).map(|t| (t as f64, poly(t as f64))).collect();
                let curve = fit_bspline(&samples, 3, 5.0).map_err(|e| e.to_string())?;
                for &(t, v) in &samples {
                    let dev = (curve.eval(t) - v).abs();
                    if dev >= POLY_TOL {
                        return Err(format!("{name} polynomial deviates by {dev:.2e} at t={t}"));
                    }
                }
            }

            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for seed_case in 0..20 {
                let truth: Vec<[f64; 2]> =
                    (0..100).map(|t| [100.0 + 2.0 * t as f64, 200.0 + t as f64]).collect();
                let noisy: Vec<[f64; 2]> = truth
                    .iter()
                    .map(|p| {
                        [
                            p[0] + 2.0 * sample_gauss(&mut rng),
                            p[1] + 2.0 * sample_gauss(&mut rng),
                        ]
                    })
                    .collect();
                let traj = Trajectory2D {
                    frames: (0..100).collect(),
                    points: noisy.clone(),
                    smoothed: noisy.clone(),
                };
                let smoothed = smooth_trajectory(&traj, 3, 5.0).map_err(|e| e.to_string())?;
                let rmse = |pts: &[[f64; 2]]| {
                    let sum: f64 = pts
                        .iter()
                        .zip(&truth)
                        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
                        .sum();
                    (sum / pts.len() as f64).sqrt()
                };
                let raw = rmse(&noisy);
                let fit = rmse(&smoothed.smoothed);
                if fit >= raw {
                    return Err(format!(
                        "seed case {seed_case}: smoothed RMSE {fit:.3} px not below raw {raw:.3} px"
                    ));
                }
            }
            Ok(())
        },
    );
}

/// Box-Muller from uniform draws, good enough for a fixed-seed jitter test.
fn sample_gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn run_cli(args: &[&str]) -> CheckResult {
    let output = Command::new(env!("CARGO_BIN_EXE_uavtraj"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| format!("spawning uavtraj: {e}"))?;
    if !output.status.success() {
        return Err(format!(
            "uavtraj {args:?} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(())
}

fn assert_same_bytes(a: &Path, b: &Path) -> CheckResult {
    let left = fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let right = fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    if left != right {
        return Err(format!("{} and {} differ", a.display(), b.display()));
    }
    Ok(())
}

const DEMO_CONFIG: &str = r#"
schema_version = 1

[intrinsics]
fx = 1000.0
fy = 1000.0
cx = 640.0
cy = 360.0

[size_priors]
uav = 0.5

[scenario]
duration = 60
frame_rate = 30.0
h_real = 0.5
experts = 3
seed = 5
label = "uav"

[scenario.motion]
kind = "constant_velocity"
start = [0.5, -0.3, 6.0]
velocity = [0.2, 0.1, 0.05]

[scenario.intrinsics]
fx = 1000.0
fy = 1000.0
cx = 640.0
cy = 360.0

[scenario.noise]
sigma_uv = 0.5
sigma_h = 2.0
p_miss = 0.1
"#;

#[test]
fn criterion_10_cli_determinism() {
    check(
        10,
        Duration::from_secs(10),
        "every subcommand run twice produces byte-identical data outputs",
        || {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let root = dir.path();
            let cfg = root.join("config.toml");
            fs::write(&cfg, DEMO_CONFIG).map_err(|e| e.to_string())?;
            let cfg_s = cfg.to_str().unwrap();
            let p = |name: &str| root.join(name);
            let s = |path: &Path| path.to_str().unwrap().to_string();

            for sim in ["simA", "simB"] {
                run_cli(&["simulate", "--config", cfg_s, "--out-dir", &s(&p(sim))])?;
            }
            for name in [
                "detections.jsonl",
                "truth.csv",
                "labels.jsonl",
                "scores.jsonl",
                "prompts.json",
            ] {
                assert_same_bytes(&p("simA").join(name), &p("simB").join(name))?;
            }
            let sim = p("simA");

            let pairs: [(&str, Vec<String>); 2] = [
                (
                    "verdicts",
                    vec![
                        "filter".into(),
                        "--scores".into(),
                        s(&sim.join("scores.jsonl")),
                        "--prompts".into(),
                        s(&sim.join("prompts.json")),
                        "--config".into(),
                        cfg_s.into(),
                    ],
                ),
                (
                    "fused",
                    vec![
                        "fuse".into(),
                        "--detections".into(),
                        s(&sim.join("detections.jsonl")),
                        "--config".into(),
                        cfg_s.into(),
                    ],
                ),
            ];
            for (stem, args) in &pairs {
                for run in ["1", "2"] {
                    let out = p(&format!("{stem}{run}.jsonl"));
                    let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
                    full.push("--out");
                    let out_s = s(&out);
                    full.push(&out_s);
                    run_cli(&full)?;
                }
                assert_same_bytes(&p(&format!("{stem}1.jsonl")), &p(&format!("{stem}2.jsonl")))?;
            }

            let fused = p("fused1.jsonl");
            for run in ["1", "2"] {
                run_cli(&[
                    "smooth",
                    "--fused",
                    &s(&fused),
                    "--config",
                    cfg_s,
                    "--out",
                    &s(&p(&format!("traj2d{run}.csv"))),
                ])?;
                run_cli(&[
                    "classify",
                    "--labels",
                    &s(&sim.join("labels.jsonl")),
                    "--config",
                    cfg_s,
                    "--out",
                    &s(&p(&format!("cliplabels{run}.jsonl"))),
                ])?;
            }
            assert_same_bytes(&p("traj2d1.csv"), &p("traj2d2.csv"))?;
            assert_same_bytes(&p("cliplabels1.jsonl"), &p("cliplabels2.jsonl"))?;

            for run in ["1", "2"] {
                run_cli(&[
                    "refine",
                    "--fused",
                    &s(&fused),
                    "--traj2d",
                    &s(&p("traj2d1.csv")),
                    "--clip-labels",
                    &s(&p("cliplabels1.jsonl")),
                    "--config",
                    cfg_s,
                    "--out",
                    &s(&p(&format!("traj3d{run}.csv"))),
                ])?;
            }
            assert_same_bytes(&p("traj3d1.csv"), &p("traj3d2.csv"))?;

            for out_dir in ["pipe1", "pipe2"] {
                run_cli(&[
                    "pipeline",
                    "--detections",
                    &s(&sim.join("detections.jsonl")),
                    "--scores",
                    &s(&sim.join("scores.jsonl")),
                    "--prompts",
                    &s(&sim.join("prompts.json")),
                    "--labels",
                    &s(&sim.join("labels.jsonl")),
                    "--config",
                    cfg_s,
                    "--out-dir",
                    &s(&p(out_dir)),
                ])?;
            }
            for name in [
                "verdicts.jsonl",
                "fused.jsonl",
                "traj2d.csv",
                "cliplabels.jsonl",
                "traj3d.csv",
            ] {
                assert_same_bytes(&p("pipe1").join(name), &p("pipe2").join(name))?;
            }

            for run in ["1", "2"] {
                run_cli(&[
                    "sweep",
                    "--config",
                    cfg_s,
                    "--gamma-q",
                    "0.8,1.0",
                    "--gamma-r",
                    "0.8,1.0",
                    "--runs",
                    "1",
                    "--out",
                    &s(&p(&format!("sweep{run}.csv"))),
                ])?;
            }
            assert_same_bytes(&p("sweep1.csv"), &p("sweep2.csv"))?;

            let truth_labels = p("truthlabels.jsonl");
            fs::write(&truth_labels, "{\"clip_id\":\"sim\",\"label\":\"uav\"}\n")
                .map_err(|e| e.to_string())?;
            for run in ["1", "2"] {
                run_cli(&[
                    "eval",
                    "--est",
                    &s(&p("traj3d1.csv")),
                    "--truth",
                    &s(&sim.join("truth.csv")),
                    "--pred-labels",
                    &s(&p("cliplabels1.jsonl")),
                    "--truth-labels",
                    &s(&truth_labels),
                    "--json",
                    &s(&p(&format!("report{run}.json"))),
                ])?;
            }
            assert_same_bytes(&p("report1.json"), &p("report2.json"))?;
            Ok(())
        },
    );
}
