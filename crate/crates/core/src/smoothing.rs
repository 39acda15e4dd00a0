//! Least-squares B-spline smoothing of 2D pixel trajectories.
//!
//! Box barycenters arrive as discrete, jittery samples; fitting a clamped
//! uniform-knot cubic spline and re-evaluating it at the original frame
//! times yields the continuous trajectory the downstream filter consumes.
//! Sequences too short for a well-posed fit fall back to linear
//! interpolation of the raw points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedObservation;

/// Pixel-space trajectory: raw barycenters plus their smoothed counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    /// Strictly increasing frame indices.
    pub frames: Vec<u64>,
    /// Raw (u, v) barycenters, one per frame.
    pub points: Vec<[f64; 2]>,
    /// Smoothed (u, v), same length as `points`.
    pub smoothed: Vec<[f64; 2]>,
}

impl Trajectory2D {
    /// Build a trajectory from fused observations, using box centers as
    /// barycenters. `smoothed` starts out equal to `points`.
    pub fn from_fused(obs: &BTreeMap<u64, FusedObservation>) -> Self {
        let mut frames = Vec::with_capacity(obs.len());
        let mut points = Vec::with_capacity(obs.len());
        for (&frame, o) in obs {
            frames.push(frame);
            points.push([o.bbox.x, o.bbox.y]);
        }
        Trajectory2D {
            frames,
            smoothed: points.clone(),
            points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.frames.len() || self.smoothed.len() != self.frames.len() {
            return Err(Error::LengthMismatch {
                left: self.frames.len(),
                right: self.points.len().max(self.smoothed.len()),
            });
        }
        for w in self.frames.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::NonMonotoneParameter {
                    index: 0,
                    value: w[1] as f64,
                });
            }
        }
        Ok(())
    }
}

/// A fitted 1D curve: either a genuine B-spline or the short-sequence
/// linear-interpolation fallback.
#[derive(Debug, Clone)]
pub enum Curve {
    Spline(BSpline),
    Linear { ts: Vec<f64>, values: Vec<f64> },
}

impl Curve {
    /// Evaluate at parameter `t`, which must lie within the fitted range.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Spline(s) => s.eval(t),
            Curve::Linear { ts, values } => {
                if ts.len() == 1 || t <= ts[0] {
                    return values[0];
                }
                let last = ts.len() - 1;
                if t >= ts[last] {
                    return values[last];
                }
                let hi = ts.partition_point(|&x| x <= t);
                let (t0, t1) = (ts[hi - 1], ts[hi]);
                let a = (t - t0) / (t1 - t0);
                values[hi - 1] * (1.0 - a) + values[hi] * a
            }
        }
    }
}

/// Clamped B-spline in one dimension.
#[derive(Debug, Clone)]
pub struct BSpline {
    degree: usize,
    /// Full knot vector with endpoint multiplicity `degree + 1`.
    knots: Vec<f64>,
    coefs: Vec<f64>,
}

impl BSpline {
    fn find_span(&self, t: f64) -> usize {
        let k = self.degree;
        let n = self.coefs.len();
        // Last non-vanishing span is [knots[n-1], knots[n]].
        if t >= self.knots[n] {
            return n - 1;
        }
        let mut lo = k;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `degree + 1` basis functions that are nonzero at `t`
    /// (Cox–de Boor recursion over the active span).
    fn basis_at(&self, span: usize, t: f64) -> Vec<f64> {
        let k = self.degree;
        let mut vals = vec![0.0; k + 1];
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        vals[0] = 1.0;
        for j in 1..=k {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        vals
    }

    pub fn eval(&self, t: f64) -> f64 {
        let span = self.find_span(t);
        let basis = self.basis_at(span, t);
        let mut acc = 0.0;
        for (j, b) in basis.iter().enumerate() {
            acc += b * self.coefs[span - self.degree + j];
        }
        acc
    }
}

fn check_monotone(samples: &[(f64, f64)]) -> Result<()> {
    for (i, w) in samples.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(Error::NonMonotoneParameter {
                index: i + 1,
                value: w[1].0,
            });
        }
    }
    Ok(())
}

/// Clamped uniform knot vector over `[t0, t1]` with interior knots every
/// `spacing`, thinned so that every knot span contains at least one sample
/// and the system stays overdetermined.
fn build_knots(ts: &[f64], degree: usize, spacing: f64) -> Vec<f64> {
    let t0 = ts[0];
    let t1 = *ts.last().unwrap();
    let mut interior = Vec::new();
    let mut kappa = t0 + spacing;
    // Strictly interior candidates only.
    while kappa < t1 - 1e-9 {
        interior.push(kappa);
        kappa += spacing;
    }

    // Keep a candidate only if the span it closes contains a sample, then
    // drop trailing knots until the control-point count fits the data.
    let mut kept: Vec<f64> = Vec::new();
    let mut span_start = t0;
    for &kappa in &interior {
        if ts.iter().any(|&t| t >= span_start && t < kappa) {
            kept.push(kappa);
            span_start = kappa;
        }
    }
    while !kept.is_empty() && kept.len() + degree + 1 > ts.len() {
        kept.pop();
    }

    let mut knots = vec![t0; degree + 1];
    knots.extend_from_slice(&kept);
    knots.extend(std::iter::repeat(t1).take(degree + 1));
    knots
}

/// Fit a least-squares B-spline of the given degree with uniform interior
/// knot spacing. Sequences shorter than `degree + 1` samples or spanning
/// less than one knot interval fall back to linear interpolation.
pub fn fit_bspline(samples: &[(f64, f64)], degree: usize, knot_spacing: f64) -> Result<Curve> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("spline samples"));
    }
    if degree == 0 || !knot_spacing.is_finite() || knot_spacing <= 0.0 {
        return Err(Error::Config(format!(
            "invalid spline parameters: degree {degree}, knot spacing {knot_spacing}"
        )));
    }
    check_monotone(samples)?;

    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let span = ts.last().unwrap() - ts[0];
    if samples.len() < degree + 1 || span < knot_spacing {
        return Ok(Curve::Linear {
            ts,
            values: samples.iter().map(|s| s.1).collect(),
        });
    }

    let knots = build_knots(&ts, degree, knot_spacing);
    let n_ctrl = knots.len() - degree - 1;
    let spline = BSpline {
        degree,
        knots,
        coefs: vec![0.0; n_ctrl],
    };

    let mut a = DMatrix::zeros(samples.len(), n_ctrl);
    let mut b = DVector::zeros(samples.len());
    for (row, &(t, y)) in samples.iter().enumerate() {
        let sp = spline.find_span(t);
        let basis = spline.basis_at(sp, t);
        for (j, &val) in basis.iter().enumerate() {
            a[(row, sp - degree + j)] = val;
        }
        b[row] = y;
    }

    let svd = a.svd(true, true);
    let coefs = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("spline least squares failed: {e}")))?;

    Ok(Curve::Spline(BSpline {
        coefs: coefs.iter().copied().collect(),
        ..spline
    }))
}

/// Smooth the u and v channels independently and evaluate the fits at the
/// original frame times. Frame indices pass through untouched.
pub fn smooth_trajectory(traj: &Trajectory2D, degree: usize, knot_spacing: f64) -> Result<Trajectory2D> {
    traj.validate()?;
    if traj.frames.is_empty() {
        return Err(Error::EmptyInput("trajectory"));
    }

    let fit_channel = |axis: usize| -> Result<Vec<f64>> {
        let samples: Vec<(f64, f64)> = traj
            .frames
            .iter()
            .zip(&traj.points)
            .map(|(&f, p)| (f as f64, p[axis]))
            .collect();
        let curve = fit_bspline(&samples, degree, knot_spacing)?;
        Ok(traj.frames.iter().map(|&f| curve.eval(f as f64)).collect())
    };

    let u = fit_channel(0)?;
    let v = fit_channel(1)?;
    Ok(Trajectory2D {
        frames: traj.frames.clone(),
        points: traj.points.clone(),
        smoothed: u.into_iter().zip(v).map(|(a, b)| [a, b]).collect(),
    })
}
