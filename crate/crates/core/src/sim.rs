//! Synthetic scenarios and evaluation metrics.
//!
//! Generates ground-truth 3D tracks, projects them into noisy multi-expert
//! detections plus label/score streams, and scores estimates against truth.
//! All randomness flows from one ChaCha8 stream seeded by the scenario, so
//! identical scenarios produce identical bytes.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{project, BoundingBox, CameraIntrinsics};
use crate::classification::FrameLabel;
use crate::error::{Error, Result};
use crate::filtering::{Prompt, PromptManifest, PromptRole, ScoreRecord};
use crate::fusion::Detection;
use crate::refine::{build_q, refine_observations, NoiseConfig, Trajectory3D};

/// Minimum permitted depth for a generated track.
const Z_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    ConstantVelocity {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    PiecewiseVelocity {
        start: [f64; 3],
        velocities: Vec<[f64; 3]>,
        segment_len: u64,
    },
    Sinusoidal {
        start: [f64; 3],
        velocity: [f64; 3],
        /// Lateral (X) oscillation amplitude in meters.
        amplitude: f64,
        /// Oscillation period in frames.
        period: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Pixel-coordinate noise on box centers (std, px).
    pub sigma_uv: f64,
    /// Pixel noise on box sizes (std, px).
    pub sigma_h: f64,
    /// Per-expert drop probability.
    pub p_miss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub motion: MotionModel,
    /// Length in frames.
    pub duration: u64,
    pub frame_rate: f64,
    pub intrinsics: CameraIntrinsics,
    /// Physical object height in meters.
    pub h_real: f64,
    pub noise: NoiseSpec,
    pub experts: usize,
    pub seed: u64,
    /// When set, the truth itself evolves stochastically: the constant
    /// velocity recursion gains additive Gaussian noise at this multiple of
    /// the filter's base process-noise levels.
    #[serde(default)]
    pub process_noise_scale: Option<f64>,
    /// Index of an expert whose boxes are offset far outside the truth,
    /// for consensus-rejection scenarios.
    #[serde(default)]
    pub outlier_expert: Option<usize>,
    /// Per-expert p_miss overrides (may be 1.0 to silence an expert).
    #[serde(default)]
    pub p_miss_overrides: Option<Vec<f64>>,
    /// Category id attached to generated frame labels.
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "uav".to_string()
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.duration < 1 {
            return Err(Error::InvalidScenario("duration must be >= 1".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "frame_rate must be > 0, got {}",
                self.frame_rate
            )));
        }
        self.intrinsics.validate()?;
        if !(self.h_real.is_finite() && self.h_real > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "h_real must be > 0, got {}",
                self.h_real
            )));
        }
        if self.noise.sigma_uv < 0.0 || self.noise.sigma_h < 0.0 {
            return Err(Error::InvalidScenario("noise sigmas must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.noise.p_miss) {
            return Err(Error::InvalidScenario(format!(
                "p_miss must be in [0, 1), got {}",
                self.noise.p_miss
            )));
        }
        if self.experts < 1 {
            return Err(Error::InvalidScenario("experts must be >= 1".into()));
        }
        if let Some(overrides) = &self.p_miss_overrides {
            if overrides.len() != self.experts {
                return Err(Error::InvalidScenario(format!(
                    "p_miss_overrides has {} entries for {} experts",
                    overrides.len(),
                    self.experts
                )));
            }
            if overrides.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidScenario(
                    "p_miss_overrides entries must be in [0, 1]".into(),
                ));
            }
        }
        if let Some(idx) = self.outlier_expert {
            if idx >= self.experts {
                return Err(Error::InvalidScenario(format!(
                    "outlier expert {idx} out of range for {} experts",
                    self.experts
                )));
            }
        }
        if let Some(scale) = self.process_noise_scale {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::InvalidScenario(
                    "process_noise_scale must be >= 0".into(),
                ));
            }
            if !matches!(self.motion, MotionModel::ConstantVelocity { .. }) {
                return Err(Error::InvalidScenario(
                    "process noise requires the constant_velocity motion model".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Evaluation metrics against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared position error over common frames (m²).
    pub e3d: f64,
    /// √e3d (m).
    pub rmse: f64,
    /// Per-axis mean absolute errors (m).
    pub d_x: f64,
    pub d_y: f64,
    pub d_z: f64,
    /// Filled only when clip labels were evaluated alongside.
    pub clip_accuracy: Option<f64>,
}

/// One row of a noise-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma_q_z: f64,
    pub gamma_r_h: f64,
    /// Mean |Z − Z_GT| in meters, averaged over runs.
    pub depth_error: f64,
}

/// The prompt set used by generated score records and fixtures.
pub fn default_prompt_manifest() -> PromptManifest {
    let mut m = PromptManifest::new();
    let mut add = |id: &str, text: &str, role: PromptRole| {
        m.insert(
            id.to_string(),
            Prompt {
                text: text.to_string(),
                role,
            },
        );
    };
    add("vis_pos", "a drone flying in the sky", PromptRole::PosVis);
    add("vis_neg", "no drone in view", PromptRole::NegVis);
    add(
        "view_static",
        "footage from a stationary camera",
        PromptRole::Static,
    );
    add(
        "view_dynamic",
        "footage from a moving camera",
        PromptRole::Dynamic,
    );
    m
}

struct TruthSample {
    position: Point3<f64>,
    velocity: Vector3<f64>,
}

fn truth_states(scn: &Scenario, rng: &mut ChaCha8Rng) -> Result<Vec<TruthSample>> {
    let dt = 1.0 / scn.frame_rate;
    let mut out = Vec::with_capacity(scn.duration as usize);

    if let Some(scale) = scn.process_noise_scale {
        let MotionModel::ConstantVelocity { start, velocity } = &scn.motion else {
            unreachable!("validated");
        };
        let q = build_q(&NoiseConfig::new(1.0, 1.0, dt, scn.h_real)?);
        let stds: Vec<f64> = (0..6).map(|i| scale * q[(i, i)].sqrt()).collect();
        let noise: Vec<Normal<f64>> = stds
            .iter()
            .map(|&s| Normal::new(0.0, s.max(f64::MIN_POSITIVE)).expect("finite std"))
            .collect();
        let mut x = Vector6::from_row_slice(&[
            start[0], start[1], start[2], velocity[0], velocity[1], velocity[2],
        ]);
        for _ in 0..scn.duration {
            out.push(TruthSample {
                position: Point3::new(x[0], x[1], x[2]),
                velocity: Vector3::new(x[3], x[4], x[5]),
            });
            for i in 0..3 {
                x[i] += dt * x[i + 3];
            }
            if scale > 0.0 {
                for i in 0..6 {
                    x[i] += noise[i].sample(rng);
                }
            }
        }
        return Ok(out);
    }

    for t in 0..scn.duration {
        let tf = t as f64;
        let sample = match &scn.motion {
            MotionModel::ConstantVelocity { start, velocity } => {
                let v = Vector3::from_row_slice(velocity);
                TruthSample {
                    position: Point3::from(Vector3::from_row_slice(start) + v * (tf * dt)),
                    velocity: v,
                }
            }
            MotionModel::PiecewiseVelocity {
                start,
                velocities,
                segment_len,
            } => {
                if velocities.is_empty() || *segment_len == 0 {
                    return Err(Error::InvalidScenario(
                        "piecewise motion needs velocities and segment_len >= 1".into(),
                    ));
                }
                let mut p = Vector3::from_row_slice(start);
                let mut remaining = t;
                let mut v = Vector3::from_row_slice(&velocities[0]);
                for (i, seg) in velocities.iter().enumerate() {
                    v = Vector3::from_row_slice(seg);
                    let seg_frames = if i + 1 == velocities.len() {
                        remaining
                    } else {
                        remaining.min(*segment_len)
                    };
                    p += v * (seg_frames as f64 * dt);
                    remaining -= seg_frames;
                    if remaining == 0 {
                        break;
                    }
                }
                TruthSample {
                    position: Point3::from(p),
                    velocity: v,
                }
            }
            MotionModel::Sinusoidal {
                start,
                velocity,
                amplitude,
                period,
            } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::InvalidScenario("period must be > 0".into()));
                }
                let phase = 2.0 * std::f64::consts::PI * tf / period;
                let mut p = Vector3::from_row_slice(start)
                    + Vector3::from_row_slice(velocity) * (tf * dt);
                p.x += amplitude * phase.sin();
                let mut v = Vector3::from_row_slice(velocity);
                v.x += amplitude * (2.0 * std::f64::consts::PI / period) * scn.frame_rate
                    * phase.cos();
                TruthSample {
                    position: Point3::from(p),
                    velocity: v,
                }
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Generate one scenario: ground truth plus the detection, label, and score
/// streams an upstream perception stack would have produced.
pub fn generate(
    scn: &Scenario,
) -> Result<(Trajectory3D, Vec<Detection>, Vec<FrameLabel>, Vec<ScoreRecord>)> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let states = truth_states(scn, &mut rng)?;

    for (t, s) in states.iter().enumerate() {
        if s.position.z < Z_FLOOR {
            return Err(Error::Frustum {
                frame: t as u64,
                z: s.position.z,
            });
        }
    }

    let truth = Trajectory3D {
        frames: (0..scn.duration).collect(),
        positions: states.iter().map(|s| s.position).collect(),
        velocities: states.iter().map(|s| s.velocity).collect(),
        raw_depths: vec![None; scn.duration as usize],
    };

    let noise_uv = Normal::new(0.0, scn.noise.sigma_uv.max(f64::MIN_POSITIVE)).expect("sigma");
    let noise_h = Normal::new(0.0, scn.noise.sigma_h.max(f64::MIN_POSITIVE)).expect("sigma");
    let mut detections = Vec::new();
    for (t, s) in states.iter().enumerate() {
        let m = project(&s.position, &scn.intrinsics, scn.h_real)?;
        let (u, v, h_px) = (m[0], m[1], m[2]);
        for e in 0..scn.experts {
            let p_miss = scn
                .p_miss_overrides
                .as_ref()
                .map(|o| o[e])
                .unwrap_or(scn.noise.p_miss);
            if rng.random::<f64>() < p_miss {
                continue;
            }
            let mut cu = u + noise_uv.sample(&mut rng);
            let cv = v + noise_uv.sample(&mut rng);
            let mut h = h_px + noise_h.sample(&mut rng);
            while h <= 0.0 {
                h = h_px + noise_h.sample(&mut rng);
            }
            let mut w = h_px + noise_h.sample(&mut rng);
            while w <= 0.0 {
                w = h_px + noise_h.sample(&mut rng);
            }
            if scn.outlier_expert == Some(e) {
                cu += 3.0 * h_px + 10.0;
            }
            detections.push(Detection {
                frame: t as u64,
                expert_id: format!("e{e}"),
                bbox: BoundingBox {
                    x: cu,
                    y: cv,
                    w,
                    h,
                },
                confidence: rng.random_range(0.5..1.0),
            });
        }
    }

    let mut labels = Vec::new();
    for t in (0..scn.duration).step_by(10) {
        labels.push(FrameLabel {
            clip_id: "sim".to_string(),
            frame: t,
            label: scn.label.clone(),
            confidence: rng.random_range(0.7..1.0),
        });
    }

    let score_step = (scn.frame_rate / 2.0).round().max(1.0) as u64;
    let mut scores = Vec::new();
    for t in (0..scn.duration).step_by(score_step as usize) {
        let mut s = BTreeMap::new();
        s.insert("vis_pos".to_string(), rng.random_range(0.75..0.95));
        s.insert("vis_neg".to_string(), rng.random_range(0.05..0.25));
        s.insert("view_static".to_string(), rng.random_range(0.55..0.85));
        s.insert("view_dynamic".to_string(), rng.random_range(0.10..0.40));
        scores.push(ScoreRecord {
            clip_id: "sim".to_string(),
            frame: t,
            scores: s,
        });
    }

    Ok((truth, detections, labels, scores))
}

/// Pull one expert's detections out as raw (u, v, h) observation triples.
pub fn observations_from_expert(dets: &[Detection], expert_id: &str) -> BTreeMap<u64, [f64; 3]> {
    dets.iter()
        .filter(|d| d.expert_id == expert_id)
        .map(|d| (d.frame, [d.bbox.x, d.bbox.y, d.bbox.h]))
        .collect()
}

/// Mean squared position error over the common frames, plus RMSE and the
/// per-axis mean absolute errors.
pub fn e3d(est: &Trajectory3D, truth: &Trajectory3D) -> Result<Metrics> {
    est.validate()?;
    truth.validate()?;
    let truth_by_frame: BTreeMap<u64, &Point3<f64>> =
        truth.frames.iter().copied().zip(truth.positions.iter()).collect();

    let mut n = 0usize;
    let mut sum_sq = 0.0;
    let mut sum_abs = Vector3::zeros();
    for (f, p) in est.frames.iter().zip(&est.positions) {
        if let Some(gt) = truth_by_frame.get(f) {
            let d = p - *gt;
            sum_sq += d.norm_squared();
            sum_abs += d.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoCommonFrames);
    }
    let e3d = sum_sq / n as f64;
    Ok(Metrics {
        e3d,
        rmse: e3d.sqrt(),
        d_x: sum_abs.x / n as f64,
        d_y: sum_abs.y / n as f64,
        d_z: sum_abs.z / n as f64,
        clip_accuracy: None,
    })
}

/// Sweep the filter's noise scales over a grid.
///
/// For each of `runs` seeds (scenario seed + run index) one observation
/// stream is generated from the first expert and re-filtered under every
/// grid cell, so cells differ only in filter parameters, never in data.
pub fn sweep(scn: &Scenario, grid: &[(f64, f64)], runs: u64) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    if runs == 0 {
        return Err(Error::InvalidScenario("sweep needs at least one run".into()));
    }
    scn.validate()?;
    let dt = 1.0 / scn.frame_rate;

    let mut totals = vec![0.0; grid.len()];
    for run in 0..runs {
        let mut per_run = scn.clone();
        per_run.seed = scn.seed.wrapping_add(run);
        let (truth, dets, _, _) = generate(&per_run)?;
        let obs = observations_from_expert(&dets, "e0");
        let truth_z: BTreeMap<u64, f64> = truth
            .frames
            .iter()
            .copied()
            .zip(truth.positions.iter().map(|p| p.z))
            .collect();

        for (cell, &(gq, gr)) in grid.iter().enumerate() {
            let cfg = NoiseConfig::new(gq, gr, dt, scn.h_real)?;
            let traj = refine_observations(&obs, &scn.intrinsics, &cfg, None)?;
            let mut n = 0usize;
            let mut sum = 0.0;
            for (f, p) in traj.frames.iter().zip(&traj.positions) {
                if let Some(zt) = truth_z.get(f) {
                    sum += (p.z - zt).abs();
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::NoCommonFrames);
            }
            totals[cell] += sum / n as f64;
        }
    }

    Ok(grid
        .iter()
        .zip(totals)
        .map(|(&(gamma_q_z, gamma_r_h), total)| SweepRow {
            gamma_q_z,
            gamma_r_h,
            depth_error: total / runs as f64,
        })
        .collect())
}

/// Construct the 200-clip score fixture: 50 clips pass both filter stages,
/// 80 pass visibility but look dynamic, 35 fail on margin, and 35 align
/// with the negative prompt. Returns the records with their manifest.
pub fn filter_fixture(seed: u64) -> (Vec<ScoreRecord>, PromptManifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames_per_clip = 8u64;
    let mut records = Vec::new();

    for clip in 0..200usize {
        let clip_id = format!("clip_{clip:03}");
        for f in 0..frames_per_clip {
            let frame = f * 15;
            let (pos, neg, sta, dyn_) = match clip {
                // Accepted: relevant, wide margin, static view.
                0..=49 => (
                    rng.random_range(0.78..0.88),
                    rng.random_range(0.10..0.20),
                    rng.random_range(0.60..0.80),
                    rng.random_range(0.15..0.35),
                ),
                // Visibility passes, but the camera moves.
                50..=129 => (
                    rng.random_range(0.78..0.88),
                    rng.random_range(0.10..0.20),
                    rng.random_range(0.15..0.35),
                    rng.random_range(0.60..0.80),
                ),
                // Margin below threshold on every frame.
                130..=164 => (
                    rng.random_range(0.50..0.55),
                    rng.random_range(0.35..0.45),
                    rng.random_range(0.60..0.80),
                    rng.random_range(0.15..0.35),
                ),
                // Negative prompt wins outright.
                _ => (
                    rng.random_range(0.20..0.40),
                    rng.random_range(0.80..0.90),
                    rng.random_range(0.60..0.80),
                    rng.random_range(0.15..0.35),
                ),
            };
            let mut scores = BTreeMap::new();
            scores.insert("vis_pos".to_string(), pos);
            scores.insert("vis_neg".to_string(), neg);
            scores.insert("view_static".to_string(), sta);
            scores.insert("view_dynamic".to_string(), dyn_);
            records.push(ScoreRecord {
                clip_id: clip_id.clone(),
                frame,
                scores,
            });
        }
    }
    (records, default_prompt_manifest())
}
