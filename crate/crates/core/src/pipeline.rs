//! Stage composition: filter → fuse → smooth → classify → refine, plus the
//! evaluation report used by `eval`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::classification::{lookup_size_prior, vote_clip, ClipLabel, FrameLabel};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::filtering::{run_filter, ClipVerdict, Decision, PromptManifest, ScoreRecord};
use crate::fusion::{fuse_sequence, Detection, FusedObservation};
use crate::refine::{refine_observations, refine_track, Trajectory3D};
use crate::sim::Metrics;
use crate::smoothing::{smooth_trajectory, Trajectory2D};

/// Everything one batch produces, keyed by clip where applicable.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    /// Present only when score records were supplied.
    pub verdicts: Option<Vec<ClipVerdict>>,
    pub fused: BTreeMap<String, BTreeMap<u64, FusedObservation>>,
    pub traj2d: BTreeMap<String, Trajectory2D>,
    pub clip_labels: Vec<ClipLabel>,
    pub traj3d: BTreeMap<String, Trajectory3D>,
}

/// Vote clip labels for every clip that has any.
pub fn vote_all_clips(labels: &[FrameLabel], n: usize, rho: f64) -> Result<Vec<ClipLabel>> {
    let mut by_clip: BTreeMap<&str, Vec<FrameLabel>> = BTreeMap::new();
    for l in labels {
        l.validate()?;
        by_clip.entry(&l.clip_id).or_default().push(l.clone());
    }
    by_clip
        .values()
        .map(|ls| vote_clip(ls, n, rho))
        .collect()
}

/// Resolve a clip's physical height: voted label → size-prior table, with
/// the configured default as fallback.
pub fn clip_h_real(clip_id: &str, clip_labels: &[ClipLabel], cfg: &PipelineConfig) -> f64 {
    let table = cfg.size_prior_table();
    clip_labels
        .iter()
        .find(|c| c.clip_id == clip_id)
        .and_then(|c| lookup_size_prior(&c.label, &table).ok())
        .unwrap_or(cfg.noise.h_real)
}

/// Run the full per-clip pipeline over a detection batch.
///
/// When score records are given, clips rejected by the filter are dropped
/// before fusion. With `smooth_uv` (the default behavior) the filter
/// consumes spline-smoothed box centers together with raw box heights;
/// otherwise raw centers.
pub fn run_pipeline(
    detections: &BTreeMap<String, Vec<Detection>>,
    scores: Option<(&[ScoreRecord], &PromptManifest)>,
    labels: &[FrameLabel],
    cfg: &PipelineConfig,
    smooth_uv: bool,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;

    let verdicts = scores.map(|(records, manifest)| {
        run_filter(records, manifest, &cfg.filter_params())
    });
    let accepted: Option<BTreeSet<String>> = verdicts.as_ref().map(|vs| {
        vs.iter()
            .filter(|v| v.decision == Decision::Accept)
            .map(|v| v.clip_id.clone())
            .collect()
    });

    let clip_labels = vote_all_clips(labels, cfg.thresholds.n, cfg.thresholds.rho)?;

    let mut out = PipelineOutput {
        verdicts,
        clip_labels,
        ..PipelineOutput::default()
    };

    for (clip_id, dets) in detections {
        if let Some(accepted) = &accepted {
            if !accepted.contains(clip_id) {
                log::info!("clip {clip_id}: rejected by filter, skipping");
                continue;
            }
        }
        let fused = fuse_sequence(dets, cfg.thresholds.tau_prime)?;
        if fused.is_empty() {
            log::warn!("clip {clip_id}: no consensus detections, skipping");
            continue;
        }

        let traj2d = smooth_trajectory(
            &Trajectory2D::from_fused(&fused),
            cfg.spline.degree,
            cfg.spline.knot_spacing,
        )?;

        let noise = cfg.noise_config(Some(clip_h_real(clip_id, &out.clip_labels, cfg)))?;
        let traj3d = if smooth_uv {
            let obs: BTreeMap<u64, [f64; 3]> = traj2d
                .frames
                .iter()
                .zip(&traj2d.smoothed)
                .map(|(&f, s)| (f, [s[0], s[1], fused[&f].bbox.h]))
                .collect();
            refine_observations(&obs, k, &noise, None)?
        } else {
            refine_track(&fused, k, &noise, None)?
        };

        out.fused.insert(clip_id.clone(), fused);
        out.traj2d.insert(clip_id.clone(), traj2d);
        out.traj3d.insert(clip_id.clone(), traj3d);
    }

    Ok(out)
}

/// Per-clip and pooled metrics for an estimate/truth pair.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_clip: BTreeMap<String, Metrics>,
    pub overall: Metrics,
    /// Clips present in both inputs.
    pub clips: usize,
    /// Frames pooled into `overall`.
    pub frames: usize,
}

struct ErrorSums {
    n: usize,
    sum_sq: f64,
    sum_abs: [f64; 3],
}

fn error_sums(est: &Trajectory3D, truth: &Trajectory3D) -> ErrorSums {
    let truth_by_frame: BTreeMap<u64, usize> = truth
        .frames
        .iter()
        .enumerate()
        .map(|(i, &f)| (f, i))
        .collect();
    let mut sums = ErrorSums {
        n: 0,
        sum_sq: 0.0,
        sum_abs: [0.0; 3],
    };
    for (f, p) in est.frames.iter().zip(&est.positions) {
        if let Some(&i) = truth_by_frame.get(f) {
            let d = p - truth.positions[i];
            sums.sum_sq += d.norm_squared();
            for a in 0..3 {
                sums.sum_abs[a] += d[a].abs();
            }
            sums.n += 1;
        }
    }
    sums
}

fn metrics_from(sums: &ErrorSums) -> Metrics {
    let n = sums.n as f64;
    let e3d = sums.sum_sq / n;
    Metrics {
        e3d,
        rmse: e3d.sqrt(),
        d_x: sums.sum_abs[0] / n,
        d_y: sums.sum_abs[1] / n,
        d_z: sums.sum_abs[2] / n,
        clip_accuracy: None,
    }
}

/// Compare estimates against truth, clip by clip, pooling all common
/// frames into the overall metrics.
pub fn evaluate(
    est: &BTreeMap<String, Trajectory3D>,
    truth: &BTreeMap<String, Trajectory3D>,
) -> Result<EvalReport> {
    let mut per_clip = BTreeMap::new();
    let mut pooled = ErrorSums {
        n: 0,
        sum_sq: 0.0,
        sum_abs: [0.0; 3],
    };
    for (clip, est_traj) in est {
        let Some(truth_traj) = truth.get(clip) else {
            log::warn!("clip {clip}: no ground truth, skipping");
            continue;
        };
        let sums = error_sums(est_traj, truth_traj);
        if sums.n == 0 {
            log::warn!("clip {clip}: no common frames with ground truth");
            continue;
        }
        pooled.n += sums.n;
        pooled.sum_sq += sums.sum_sq;
        for a in 0..3 {
            pooled.sum_abs[a] += sums.sum_abs[a];
        }
        per_clip.insert(clip.clone(), metrics_from(&sums));
    }
    if pooled.n == 0 {
        return Err(Error::NoCommonFrames);
    }
    Ok(EvalReport {
        overall: metrics_from(&pooled),
        clips: per_clip.len(),
        frames: pooled.n,
        per_clip,
    })
}

/// Clip accuracy over the ids present in both the predictions and the
/// truth table.
pub fn accuracy_by_id(
    predicted: &[ClipLabel],
    truth: &BTreeMap<String, String>,
) -> Result<f64> {
    let mut n = 0usize;
    let mut correct = 0usize;
    for p in predicted {
        if let Some(t) = truth.get(&p.clip_id) {
            n += 1;
            if &p.label == t {
                correct += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("clips with ground-truth labels"));
    }
    Ok(correct as f64 / n as f64)
}
