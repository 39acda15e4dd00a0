//! Pinhole-camera geometry: projection, back-projection, size-prior depth,
//! and rigid world-frame transforms.
//!
//! Image coordinates follow the (u, v) = (column, row) convention with the
//! origin at the top-left corner; `c_x`/`c_y` are the principal point offsets
//! in that frame. All geometry is double precision.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box stored center-based: (x, y) is the center in pixels,
/// w/h the full extents. Corner-based inputs are converted on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    /// Center column, pixels.
    pub x: f64,
    /// Center row, pixels.
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Build from a top-left corner representation.
    pub fn from_corner(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0)
            || ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidBox {
                w: self.w,
                h: self.h,
            });
        }
        Ok(())
    }

    /// Box extent as (left, top, right, bottom).
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x - self.w / 2.0,
            self.y - self.h / 2.0,
            self.x + self.w / 2.0,
            self.y + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Rigid SE(3) transform: rotation must be orthonormal with determinant +1.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().all(|v| v.is_finite())
            || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidTransform("non-finite entries".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation not orthonormal (max deviation {dev:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation determinant {det} != +1"
            )));
        }
        Ok(())
    }
}

/// Project a camera-frame point to (u px, v px, apparent height h px).
///
/// u = c_x + f_x·X/Z, v = c_y + f_y·Y/Z, h = H_real·f_y/Z.
pub fn project(p: &Point3<f64>, k: &CameraIntrinsics, h_real: f64) -> Result<Vector3<f64>> {
    if p.z <= 0.0 {
        return Err(Error::PointBehindCamera { z: p.z });
    }
    if h_real <= 0.0 {
        return Err(Error::InvalidIntrinsics(format!(
            "size prior must be positive (H_real = {h_real})"
        )));
    }
    Ok(Vector3::new(
        k.cx + k.fx * p.x / p.z,
        k.cy + k.fy * p.y / p.z,
        h_real * k.fy / p.z,
    ))
}

/// Coarse monocular depth from the apparent box height and a physical size prior.
pub fn depth_from_height(h: f64, fy: f64, h_real: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::DegenerateBoxHeight { h });
    }
    if fy <= 0.0 || h_real <= 0.0 {
        return Err(Error::InvalidIntrinsics(format!(
            "fy and H_real must be positive (fy = {fy}, H_real = {h_real})"
        )));
    }
    Ok(fy * h_real / h)
}

/// Lift a pixel (u, v) at depth z back to a camera-frame point.
pub fn back_project(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Result<Point3<f64>> {
    if z <= 0.0 {
        return Err(Error::NonPositiveDepth { z });
    }
    Ok(Point3::new(
        (u - k.cx) * z / k.fx,
        (v - k.cy) * z / k.fy,
        z,
    ))
}

/// Apply R·p + t.
pub fn apply_transform(p: &Point3<f64>, t: &RigidTransform) -> Point3<f64> {
    Point3::from(t.rotation * p.coords + t.translation)
}
