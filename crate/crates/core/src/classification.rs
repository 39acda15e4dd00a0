//! Clip-level category decisions from sparse per-frame labels.
//!
//! A clip's dominant category is the mode of its frame labels; the verdict
//! is only *confirmed* when some window of N consecutive labeled frames
//! agrees with the dominant category at ratio ρ or better. Also houses
//! fixed-length clip segmentation, the category → physical-height prior
//! table, and clip accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One classifier output: a category id with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub clip_id: String,
    pub frame: u64,
    pub label: String,
    pub confidence: f64,
}

impl FrameLabel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) || !self.confidence.is_finite() {
            return Err(Error::InvalidConfidence {
                value: self.confidence,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStatus {
    Confirmed,
    Uncertain,
}

/// Voted clip-level label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLabel {
    pub clip_id: String,
    pub label: String,
    pub confidence: f64,
    pub status: LabelStatus,
    /// Best dominant-label agreement over any N-window (or the overall
    /// dominant fraction when fewer than N labels exist).
    pub agreement: f64,
}

/// Physical height prior for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub label: String,
    pub h_real: f64,
}

/// Majority vote with the ρ/N consistency rule.
///
/// The dominant label is the mode (ties broken toward the lexicographically
/// smallest category id). Windows of `n` consecutive labeled frames are
/// scanned; if the best window's dominant-label agreement reaches `rho` the
/// result is confirmed with confidence `max(window mean confidence,
/// agreement)`, otherwise uncertain with the mean confidence of
/// dominant-label frames.
pub fn vote_clip(labels: &[FrameLabel], n: usize, rho: f64) -> Result<ClipLabel> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("frame labels"));
    }
    if n == 0 {
        return Err(Error::Config("voting window must be >= 1".into()));
    }
    let mut sorted: Vec<&FrameLabel> = labels.iter().collect();
    sorted.sort_by_key(|l| l.frame);

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &sorted {
        *counts.entry(&l.label).or_default() += 1;
    }
    // BTreeMap iterates keys ascending, so `>` keeps the smallest id on ties.
    let dominant = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(label, _)| label.to_string())
        .expect("nonempty");

    let mut best_agreement;
    let mut best_window: Option<&[&FrameLabel]> = None;
    if sorted.len() >= n {
        best_agreement = -1.0;
        for window in sorted.windows(n) {
            let hits = window.iter().filter(|l| l.label == dominant).count();
            let agreement = hits as f64 / n as f64;
            if agreement > best_agreement {
                best_agreement = agreement;
                best_window = Some(window);
            }
        }
    } else {
        best_agreement = counts[dominant.as_str()] as f64 / sorted.len() as f64;
    }

    let (status, confidence) = match best_window {
        Some(window) if best_agreement >= rho => {
            let mean_conf =
                window.iter().map(|l| l.confidence).sum::<f64>() / window.len() as f64;
            (LabelStatus::Confirmed, mean_conf.max(best_agreement))
        }
        _ => {
            let dom: Vec<&&FrameLabel> =
                sorted.iter().filter(|l| l.label == dominant).collect();
            let mean_conf = dom.iter().map(|l| l.confidence).sum::<f64>() / dom.len() as f64;
            (LabelStatus::Uncertain, mean_conf)
        }
    };

    Ok(ClipLabel {
        clip_id: sorted[0].clip_id.clone(),
        label: dominant,
        confidence,
        status,
        agreement: best_agreement,
    })
}

/// Split labels into consecutive non-overlapping windows of `clip_len`
/// frames, anchored at the first labeled frame. Windows with no labels are
/// dropped; a final partial window is kept when it holds at least one label.
pub fn segment_clips(labels: &[FrameLabel], clip_len: u64) -> Result<Vec<Vec<FrameLabel>>> {
    if clip_len == 0 {
        return Err(Error::Config("clip_len must be >= 1".into()));
    }
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<FrameLabel> = labels.to_vec();
    sorted.sort_by_key(|l| l.frame);
    let origin = sorted[0].frame;

    let mut clips: BTreeMap<u64, Vec<FrameLabel>> = BTreeMap::new();
    for l in sorted {
        let idx = (l.frame - origin) / clip_len;
        clips.entry(idx).or_default().push(l);
    }
    Ok(clips.into_values().collect())
}

/// Resolve a category's physical height from the prior table.
pub fn lookup_size_prior(label: &str, table: &[SizePrior]) -> Result<f64> {
    for p in table {
        if p.label == label {
            return Ok(p.h_real);
        }
    }
    let mut known: Vec<String> = table.iter().map(|p| p.label.clone()).collect();
    known.sort();
    Err(Error::UnknownLabel {
        label: label.to_string(),
        known,
    })
}

/// Fraction of clips whose voted label matches the ground truth. Uncertain
/// clips still score through their dominant label.
pub fn accuracy(predicted: &[ClipLabel], truth: &[String]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("predicted clip labels"));
    }
    let correct = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| &p.label == *t)
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}
