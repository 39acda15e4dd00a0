//! Physics-informed trajectory refinement.
//!
//! An extended Kalman filter with a near-constant-velocity motion model
//! fuses per-frame (u, v, h) observations — box center plus apparent pixel
//! height — into metric 3D trajectories. The observation model is the
//! perspective projection of [`crate::camera::project`]; its Jacobian is
//! analytic, with zero velocity columns since the measurement depends only
//! on position.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix6, Point3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{back_project, depth_from_height, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::fusion::FusedObservation;

/// Process-noise standard deviations at γ_Q_z = 1:
/// (X, Y, Z, V_x, V_y, V_z).
const Q_SIGMA: [f64; 6] = [0.01, 0.01, 0.05, 0.10, 0.10, 0.50];
/// Measurement-noise standard deviations at γ_R_h = 1: (u, v, h) in pixels.
const R_SIGMA: [f64; 3] = [0.5, 0.5, 5.0];
/// Depth floor applied after each update; the projection model is singular
/// at Z = 0.
const Z_MIN: f64 = 0.1;

/// Gaussian state belief over position (m) and velocity (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl FilterState {
    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.mean[3], self.mean[4], self.mean[5])
    }

    pub fn validate(&self) -> Result<()> {
        let asym = (self.covariance - self.covariance.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::Numerical(format!(
                "covariance asymmetry {asym:.3e} exceeds 1e-9"
            )));
        }
        for i in 0..6 {
            if self.covariance[(i, i)] < 0.0 {
                return Err(Error::Numerical(format!(
                    "negative variance at index {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Noise scales and model constants for one filter run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Scale on the depth rows of the process noise (γ_Q_z ≥ 0).
    pub gamma_q_z: f64,
    /// Scale on the height row of the measurement noise (γ_R_h > 0).
    pub gamma_r_h: f64,
    /// Frame interval in seconds.
    pub dt: f64,
    /// Physical object height in meters, for the size-prior depth.
    pub h_real: f64,
    /// Diagonal of the initial covariance.
    #[serde(default = "default_p0_diag")]
    pub p0_diag: [f64; 6],
}

fn default_p0_diag() -> [f64; 6] {
    [1.0, 1.0, 4.0, 1.0, 1.0, 1.0]
}

impl NoiseConfig {
    pub fn new(gamma_q_z: f64, gamma_r_h: f64, dt: f64, h_real: f64) -> Result<Self> {
        let cfg = NoiseConfig {
            gamma_q_z,
            gamma_r_h,
            dt,
            h_real,
            p0_diag: default_p0_diag(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma_q_z.is_finite() || self.gamma_q_z < 0.0 {
            return Err(Error::InvalidNoiseConfig(format!(
                "gamma_q_z must be >= 0, got {}",
                self.gamma_q_z
            )));
        }
        if !self.gamma_r_h.is_finite() || self.gamma_r_h <= 0.0 {
            return Err(Error::InvalidNoiseConfig(format!(
                "gamma_r_h must be > 0 (R must stay invertible), got {}",
                self.gamma_r_h
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidNoiseConfig(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !self.h_real.is_finite() || self.h_real <= 0.0 {
            return Err(Error::InvalidNoiseConfig(format!(
                "h_real must be > 0, got {}",
                self.h_real
            )));
        }
        if self.p0_diag.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidNoiseConfig(
                "p0_diag entries must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            gamma_q_z: 1.0,
            gamma_r_h: 1.0,
            dt: 1.0 / 30.0,
            h_real: 0.3,
            p0_diag: default_p0_diag(),
        }
    }
}

/// Refined 3D trajectory with per-frame raw size-prior depths kept for
/// comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory3D {
    pub frames: Vec<u64>,
    pub positions: Vec<Point3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    /// Raw ẑ per frame; `None` on prediction-only frames.
    pub raw_depths: Vec<Option<f64>>,
}

impl Trajectory3D {
    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.positions.len() != n || self.velocities.len() != n || self.raw_depths.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: self.positions.len(),
            });
        }
        if self.positions.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("non-finite trajectory position".into()));
        }
        Ok(())
    }
}

/// Process-noise covariance: diag(0.01², 0.01², γ²·0.05², 0.10², 0.10²,
/// γ²·0.50²) with γ = gamma_Q_z scaling the depth rows.
pub fn build_q(cfg: &NoiseConfig) -> Matrix6<f64> {
    let g = cfg.gamma_q_z;
    let mut q = Matrix6::zeros();
    for (i, &s) in Q_SIGMA.iter().enumerate() {
        let scale = if i == 2 || i == 5 { g * s } else { s };
        q[(i, i)] = scale * scale;
    }
    q
}

/// Measurement-noise covariance: diag(0.5², 0.5², γ²·5.0²) with
/// γ = gamma_R_h scaling the height row.
pub fn build_r(cfg: &NoiseConfig) -> Matrix3<f64> {
    let g = cfg.gamma_r_h;
    Matrix3::from_diagonal(&Vector3::new(
        R_SIGMA[0] * R_SIGMA[0],
        R_SIGMA[1] * R_SIGMA[1],
        (g * R_SIGMA[2]) * (g * R_SIGMA[2]),
    ))
}

/// Predicted observation h(x) = (u, v, h) and its 3×6 Jacobian at the state
/// mean.
pub fn observe(
    state: &FilterState,
    k: &CameraIntrinsics,
    h_real: f64,
) -> Result<(Vector3<f64>, SMatrix<f64, 3, 6>)> {
    let (x, y, z) = (state.mean[0], state.mean[1], state.mean[2]);
    if z <= 0.0 {
        return Err(Error::NonPositiveDepth { z });
    }
    let h_vec = Vector3::new(
        k.cx + k.fx * x / z,
        k.cy + k.fy * y / z,
        h_real * k.fy / z,
    );
    let mut jac = SMatrix::<f64, 3, 6>::zeros();
    jac[(0, 0)] = k.fx / z;
    jac[(0, 2)] = -k.fx * x / (z * z);
    jac[(1, 1)] = k.fy / z;
    jac[(1, 2)] = -k.fy * y / (z * z);
    jac[(2, 2)] = -h_real * k.fy / (z * z);
    Ok((h_vec, jac))
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

/// Time update under the near-constant-velocity model.
pub fn predict(state: &FilterState, cfg: &NoiseConfig) -> FilterState {
    let f = transition(cfg.dt);
    let mean = f * state.mean;
    let covariance = f * state.covariance * f.transpose() + build_q(cfg);
    FilterState {
        mean,
        covariance: symmetrized(&covariance),
    }
}

fn symmetrized(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// Measurement update. Observations with non-positive height are skipped
/// with a warning (the size-prior depth is undefined there); the depth is
/// floored at `Z_MIN` afterwards, inflating the depth variance ×10.
pub fn update(
    state: &FilterState,
    z: &Vector3<f64>,
    k: &CameraIntrinsics,
    cfg: &NoiseConfig,
) -> Result<FilterState> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite observation".into()));
    }
    if z[2] <= 0.0 {
        log::warn!("skipping observation with non-positive box height {}", z[2]);
        return Ok(state.clone());
    }

    let (h_vec, h_jac) = observe(state, k, cfg.h_real)?;
    let p = &state.covariance;
    let s = h_jac * p * h_jac.transpose() + build_r(cfg);
    let chol = s.cholesky().ok_or_else(|| {
        Error::Numerical("innovation covariance not positive definite".into())
    })?;
    let gain = p * h_jac.transpose() * chol.inverse();

    let mut mean = state.mean + gain * (z - h_vec);
    let mut covariance =
        symmetrized(&((Matrix6::identity() - gain * h_jac) * state.covariance));

    if mean[2] < Z_MIN {
        mean[2] = Z_MIN;
        let scale = 10.0_f64.sqrt();
        for i in 0..6 {
            covariance[(2, i)] *= scale;
            covariance[(i, 2)] *= scale;
        }
    }

    Ok(FilterState { mean, covariance })
}

fn initial_state(
    u: f64,
    v: f64,
    h: f64,
    k: &CameraIntrinsics,
    cfg: &NoiseConfig,
) -> Result<FilterState> {
    let z0 = depth_from_height(h, k.fy, cfg.h_real)?;
    let p0 = back_project(u, v, z0, k)?;
    let mut mean = Vector6::zeros();
    mean[0] = p0.x;
    mean[1] = p0.y;
    mean[2] = p0.z;
    Ok(FilterState {
        mean,
        covariance: Matrix6::from_diagonal(&Vector6::from_row_slice(&cfg.p0_diag)),
    })
}

/// Run the filter over raw (u, v, h) triples keyed by frame.
///
/// The state starts from the back-projected first observation with zero
/// velocity unless `init` is supplied. Every frame between the first and
/// last observation appears in the output; unobserved frames are
/// prediction-only.
pub fn refine_observations(
    obs: &BTreeMap<u64, [f64; 3]>,
    k: &CameraIntrinsics,
    cfg: &NoiseConfig,
    init: Option<FilterState>,
) -> Result<Trajectory3D> {
    cfg.validate()?;
    k.validate()?;
    let (&first, &[u0, v0, h0]) = obs.iter().next().ok_or(Error::EmptyInput("observations"))?;
    let &last = obs.keys().next_back().expect("nonempty");

    let mut state = match init {
        Some(s) => {
            s.validate()?;
            s
        }
        None => initial_state(u0, v0, h0, k, cfg)?,
    };

    let span = (last - first + 1) as usize;
    let mut traj = Trajectory3D {
        frames: Vec::with_capacity(span),
        positions: Vec::with_capacity(span),
        velocities: Vec::with_capacity(span),
        raw_depths: Vec::with_capacity(span),
    };

    for frame in first..=last {
        if frame > first {
            state = predict(&state, cfg);
        }
        let raw_depth = match obs.get(&frame) {
            Some(&[u, v, h]) => {
                state = update(&state, &Vector3::new(u, v, h), k, cfg)?;
                depth_from_height(h, k.fy, cfg.h_real).ok()
            }
            None => None,
        };
        traj.frames.push(frame);
        traj.positions.push(state.position());
        traj.velocities.push(state.velocity());
        traj.raw_depths.push(raw_depth);
    }
    Ok(traj)
}

/// Refine fused detections: box centers as (u, v), box heights as h.
pub fn refine_track(
    obs: &BTreeMap<u64, FusedObservation>,
    k: &CameraIntrinsics,
    cfg: &NoiseConfig,
    init: Option<FilterState>,
) -> Result<Trajectory3D> {
    let triples: BTreeMap<u64, [f64; 3]> = obs
        .iter()
        .map(|(&f, o)| (f, [o.bbox.x, o.bbox.y, o.bbox.h]))
        .collect();
    refine_observations(&triples, k, cfg, init)
}
