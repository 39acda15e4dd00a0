//! Pipeline configuration: a versioned TOML file with every stage's
//! thresholds and model constants. All fields have working defaults, so a
//! minimal config is just `schema_version = 1` plus an `[intrinsics]` table
//! for the commands that need a camera.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, RigidTransform};
use crate::classification::SizePrior;
use crate::error::{Error, Result};
use crate::filtering::FilterParams;
use crate::refine::NoiseConfig;
use crate::sim::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Frame-level visibility margin τ.
    #[serde(default = "d_tau")]
    pub tau: f64,
    /// Clip-level relevance threshold.
    #[serde(default = "d_rel")]
    pub rel: f64,
    /// Clip-level static-view threshold.
    #[serde(default = "d_static", rename = "static")]
    pub static_: f64,
    /// IoU clustering threshold τ′.
    #[serde(default = "d_tau_prime")]
    pub tau_prime: f64,
    /// Voting agreement threshold ρ.
    #[serde(default = "d_rho")]
    pub rho: f64,
    /// Voting window length N.
    #[serde(default = "d_n")]
    pub n: usize,
}

fn d_tau() -> f64 {
    0.3
}
fn d_rel() -> f64 {
    0.7
}
fn d_static() -> f64 {
    0.3
}
fn d_tau_prime() -> f64 {
    0.5
}
fn d_rho() -> f64 {
    0.9
}
fn d_n() -> usize {
    5
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau: d_tau(),
            rel: d_rel(),
            static_: d_static(),
            tau_prime: d_tau_prime(),
            rho: d_rho(),
            n: d_n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    /// Spline order θ.
    #[serde(default = "d_degree")]
    pub degree: usize,
    /// Uniform knot spacing η in frames.
    #[serde(default = "d_knot_spacing")]
    pub knot_spacing: f64,
}

fn d_degree() -> usize {
    3
}
fn d_knot_spacing() -> f64 {
    5.0
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            degree: d_degree(),
            knot_spacing: d_knot_spacing(),
        }
    }
}

/// Extrinsic camera-to-world transform; `rotation` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicConfig {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl ExtrinsicConfig {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let r = Matrix3::from_row_slice(&[
            self.rotation[0][0],
            self.rotation[0][1],
            self.rotation[0][2],
            self.rotation[1][0],
            self.rotation[1][1],
            self.rotation[1][2],
            self.rotation[2][0],
            self.rotation[2][1],
            self.rotation[2][2],
        ]);
        RigidTransform::new(r, Vector3::from_row_slice(&self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Evaluation clip length in frames.
    #[serde(default = "d_clip_len")]
    pub clip_len: u64,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub extrinsic: Option<ExtrinsicConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub spline: SplineConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Category id → physical height in meters.
    #[serde(default)]
    pub size_priors: BTreeMap<String, f64>,
    /// Synthetic-scenario description for `simulate` and `sweep`.
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

fn d_clip_len() -> u64 {
    30
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            clip_len: d_clip_len(),
            intrinsics: None,
            extrinsic: None,
            thresholds: Thresholds::default(),
            spline: SplineConfig::default(),
            noise: NoiseConfig::default(),
            size_priors: BTreeMap::new(),
            scenario: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.clip_len == 0 {
            return Err(Error::Config("clip_len must be >= 1".into()));
        }
        let t = &self.thresholds;
        for (name, v, lo, hi) in [
            ("thresholds.tau", t.tau, 0.0, f64::INFINITY),
            ("thresholds.rel", t.rel, 0.0, 1.0),
            ("thresholds.static", t.static_, 0.0, 1.0),
            ("thresholds.rho", t.rho, 0.0, 1.0),
        ] {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::Config(format!("{name} = {v} out of range")));
            }
        }
        if !t.tau_prime.is_finite() || !(0.0..1.0).contains(&t.tau_prime) {
            return Err(Error::Config(format!(
                "thresholds.tau_prime = {} must be in [0, 1)",
                t.tau_prime
            )));
        }
        if t.n == 0 {
            return Err(Error::Config("thresholds.n must be >= 1".into()));
        }
        if self.spline.degree == 0 {
            return Err(Error::Config("spline.degree must be >= 1".into()));
        }
        if !(self.spline.knot_spacing.is_finite() && self.spline.knot_spacing > 0.0) {
            return Err(Error::Config(format!(
                "spline.knot_spacing = {} must be > 0",
                self.spline.knot_spacing
            )));
        }
        self.noise.validate()?;
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        if let Some(e) = &self.extrinsic {
            e.to_transform()?;
        }
        for (label, h) in &self.size_priors {
            if !(h.is_finite() && *h > 0.0) {
                return Err(Error::Config(format!(
                    "size_priors.{label} = {h} must be > 0"
                )));
            }
        }
        if let Some(scn) = &self.scenario {
            scn.validate()?;
        }
        Ok(())
    }

    /// The camera, for commands that require one.
    pub fn intrinsics(&self) -> Result<&CameraIntrinsics> {
        self.intrinsics
            .as_ref()
            .ok_or_else(|| Error::Config("missing config field: intrinsics".into()))
    }

    /// The scenario section, for `simulate` and `sweep`.
    pub fn scenario(&self) -> Result<&Scenario> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::Config("missing config field: scenario".into()))
    }

    pub fn extrinsic_transform(&self) -> Result<Option<RigidTransform>> {
        self.extrinsic.as_ref().map(|e| e.to_transform()).transpose()
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            tau: self.thresholds.tau,
            rel_thresh: self.thresholds.rel,
            static_thresh: self.thresholds.static_,
        }
    }

    pub fn size_prior_table(&self) -> Vec<SizePrior> {
        self.size_priors
            .iter()
            .map(|(label, &h_real)| SizePrior {
                label: label.clone(),
                h_real,
            })
            .collect()
    }

    /// The filter noise config, optionally overriding the object height
    /// (e.g. from a per-clip size prior).
    pub fn noise_config(&self, h_real: Option<f64>) -> Result<NoiseConfig> {
        let mut cfg = self.noise.clone();
        if let Some(h) = h_real {
            cfg.h_real = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
