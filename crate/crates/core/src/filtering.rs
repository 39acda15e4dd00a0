//! Score-based clip filtering.
//!
//! Each frame carries similarity scores against a set of text prompts:
//! positive/negative visibility prompts plus a static-view and a
//! dynamic-view prompt. Frames are kept when the best-matching visibility
//! prompt is a positive one and the max−min margin clears a threshold;
//! clips are accepted when the retained frames are both relevant enough on
//! average and mostly static-view.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    PosVis,
    NegVis,
    Static,
    Dynamic,
}

impl PromptRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::PosVis => "pos_vis",
            PromptRole::NegVis => "neg_vis",
            PromptRole::Static => "static",
            PromptRole::Dynamic => "dynamic",
        }
    }
}

/// One prompt: its text (informational) and its role in the decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub role: PromptRole,
}

/// prompt_id → prompt, loaded from the sidecar manifest.
pub type PromptManifest = BTreeMap<String, Prompt>;

/// Per-frame prompt similarities for one clip frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub frame: u64,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreRecord {
    /// Ingest-time sanity check: similarities must be finite cosine-like
    /// values in [-1, 1].
    pub fn validate(&self) -> Result<()> {
        for (id, &s) in &self.scores {
            if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                return Err(Error::Parse {
                    line: self.frame as usize,
                    msg: format!("score {s} for prompt '{id}' outside [-1, 1]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub clip_id: String,
    pub frame: u64,
    /// Max similarity over all visibility prompts.
    pub relevance: f64,
    /// Max − min similarity over all visibility prompts.
    pub margin: f64,
    pub static_score: f64,
    pub dynamic_score: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipVerdict {
    pub clip_id: String,
    /// Mean relevance over retained frames (0 when none retained).
    pub video_relevance: f64,
    /// Fraction of retained frames where the static prompt beats the
    /// dynamic prompt.
    pub static_confidence: f64,
    pub decision: Decision,
    pub retained_frames: usize,
}

impl ClipVerdict {
    /// Whether the clip survives the visibility stage alone (before the
    /// static-view constraint is applied).
    pub fn passes_visibility(&self, rel_thresh: f64) -> bool {
        self.retained_frames > 0 && self.video_relevance >= rel_thresh
    }
}

/// Thresholds of the two-stage filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Frame margin threshold τ.
    pub tau: f64,
    /// Clip-level relevance threshold.
    pub rel_thresh: f64,
    /// Clip-level static-confidence threshold.
    pub static_thresh: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            tau: 0.3,
            rel_thresh: 0.7,
            static_thresh: 0.3,
        }
    }
}

fn role_of<'m>(manifest: &'m PromptManifest, id: &str) -> Option<&'m PromptRole> {
    manifest.get(id).map(|p| &p.role)
}

/// Score one frame against the margin rule.
///
/// A frame is retained iff the single best visibility score belongs to a
/// positive prompt (strictly beating every negative prompt) and the spread
/// between best and worst visibility scores reaches `tau`. Requires at least
/// one positive visibility prompt and one prompt each of the static and
/// dynamic roles; when several prompts share a viewpoint role the max score
/// is used.
pub fn score_frame(record: &ScoreRecord, manifest: &PromptManifest, tau: f64) -> Result<FrameVerdict> {
    let missing = |role: PromptRole| Error::MissingPrompt {
        role: role.as_str(),
        clip_id: record.clip_id.clone(),
        frame: record.frame,
    };

    let mut vis_max = f64::NEG_INFINITY;
    let mut vis_min = f64::INFINITY;
    let mut pos_max = f64::NEG_INFINITY;
    let mut neg_max = f64::NEG_INFINITY;
    let mut static_score = f64::NEG_INFINITY;
    let mut dynamic_score = f64::NEG_INFINITY;
    let mut saw = (false, false, false);

    for (id, &s) in &record.scores {
        if !s.is_finite() {
            return Err(Error::Parse {
                line: record.frame as usize,
                msg: format!("non-finite score for prompt '{id}'"),
            });
        }
        match role_of(manifest, id) {
            Some(PromptRole::PosVis) => {
                saw.0 = true;
                vis_max = vis_max.max(s);
                vis_min = vis_min.min(s);
                pos_max = pos_max.max(s);
            }
            Some(PromptRole::NegVis) => {
                vis_max = vis_max.max(s);
                vis_min = vis_min.min(s);
                neg_max = neg_max.max(s);
            }
            Some(PromptRole::Static) => {
                saw.1 = true;
                static_score = static_score.max(s);
            }
            Some(PromptRole::Dynamic) => {
                saw.2 = true;
                dynamic_score = dynamic_score.max(s);
            }
            None => {
                return Err(Error::Parse {
                    line: record.frame as usize,
                    msg: format!("prompt '{id}' not in manifest"),
                });
            }
        }
    }
    if !saw.0 {
        return Err(missing(PromptRole::PosVis));
    }
    if !saw.1 {
        return Err(missing(PromptRole::Static));
    }
    if !saw.2 {
        return Err(missing(PromptRole::Dynamic));
    }

    let margin = vis_max - vis_min;
    let retained = pos_max > neg_max && margin >= tau;
    Ok(FrameVerdict {
        clip_id: record.clip_id.clone(),
        frame: record.frame,
        relevance: vis_max,
        margin,
        static_score,
        dynamic_score,
        retained,
    })
}

/// Aggregate one clip's frame verdicts into an accept/reject decision.
pub fn aggregate_clip(clip_id: &str, verdicts: &[FrameVerdict], params: &FilterParams) -> Result<ClipVerdict> {
    for v in verdicts {
        if v.clip_id != clip_id {
            return Err(Error::MixedClips {
                expected: clip_id.to_string(),
                found: v.clip_id.clone(),
            });
        }
    }
    let retained: Vec<&FrameVerdict> = verdicts.iter().filter(|v| v.retained).collect();
    let n = retained.len();
    let (video_relevance, static_confidence) = if n == 0 {
        (0.0, 0.0)
    } else {
        let rel = retained.iter().map(|v| v.relevance).sum::<f64>() / n as f64;
        let stat = retained
            .iter()
            .filter(|v| v.static_score > v.dynamic_score)
            .count() as f64
            / n as f64;
        (rel, stat)
    };
    let decision = if n > 0
        && video_relevance >= params.rel_thresh
        && static_confidence >= params.static_thresh
    {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(ClipVerdict {
        clip_id: clip_id.to_string(),
        video_relevance,
        static_confidence,
        decision,
        retained_frames: n,
    })
}

/// Run the full filter over a record stream: one verdict per clip, ordered
/// by clip id. Frames that fail to score (missing prompts, bad values) are
/// logged and skipped; a clip is dropped only when every frame fails.
pub fn run_filter(
    records: &[ScoreRecord],
    manifest: &PromptManifest,
    params: &FilterParams,
) -> Vec<ClipVerdict> {
    let mut by_clip: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        by_clip.entry(&r.clip_id).or_default().push(r);
    }

    let mut out = Vec::with_capacity(by_clip.len());
    for (clip_id, recs) in by_clip {
        let mut verdicts = Vec::with_capacity(recs.len());
        for r in recs {
            match score_frame(r, manifest, params.tau) {
                Ok(v) => verdicts.push(v),
                Err(e) => log::warn!("clip {clip_id} frame {}: {e}", r.frame),
            }
        }
        if verdicts.is_empty() {
            log::warn!("clip {clip_id}: all frames malformed, skipping clip");
            continue;
        }
        // aggregate_clip only errors on mixed clips, impossible here.
        out.push(aggregate_clip(clip_id, &verdicts, params).expect("single-clip group"));
    }
    out
}
