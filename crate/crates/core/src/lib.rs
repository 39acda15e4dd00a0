//! Monocular UAV trajectory estimation from multi-expert detections.
//!
//! The pipeline turns per-frame bounding boxes from heterogeneous detectors
//! into metric 3D trajectories: score-based clip filtering, IoU consensus
//! fusion, B-spline smoothing of the 2D track, size-prior depth, and an
//! extended Kalman filter for the final 3D refinement. A seeded scenario
//! simulator and metrics engine make every stage verifiable end to end.

pub mod camera;
pub mod classification;
pub mod config;
pub mod error;
pub mod filtering;
pub mod fusion;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod sim;
pub mod smoothing;

pub use error::{Error, Result};
