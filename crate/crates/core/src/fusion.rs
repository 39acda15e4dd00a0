//! Per-frame mixture-of-experts bounding-box fusion.
//!
//! Candidate boxes from heterogeneous detectors are clustered by IoU
//! (connected components over pairs with IoU > τ′), clusters backed by fewer
//! than two distinct experts are discarded, and the surviving cluster with
//! the highest mean confidence is averaged component-wise into a single
//! fused box.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::camera::BoundingBox;
use crate::error::{Error, Result};

/// One expert's box on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u64,
    pub expert_id: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.confidence) || !self.confidence.is_finite() {
            return Err(Error::InvalidConfidence {
                value: self.confidence,
            });
        }
        Ok(())
    }
}

/// Connected component of mutually overlapping detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the detection slice passed to [`cluster_detections`],
    /// sorted ascending.
    pub member_indices: Vec<usize>,
    /// Arithmetic mean of member confidences.
    pub score: f64,
}

/// Consensus observation for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedObservation {
    pub frame: u64,
    /// Component-wise mean of the member boxes.
    pub bbox: BoundingBox,
    /// Number of distinct supporting experts (always >= 2).
    pub support: usize,
    /// Mean confidence of the member detections.
    pub score: f64,
    /// Distinct supporting expert ids, sorted.
    pub experts: Vec<String>,
}

/// Intersection-over-union of two center-based boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (al, at, ar, ab) = a.corners();
    let (bl, bt, br, bb) = b.corners();
    let iw = (ar.min(br) - al.max(bl)).max(0.0);
    let ih = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn check_single_frame(dets: &[Detection]) -> Result<()> {
    if let Some(first) = dets.first() {
        for d in dets {
            if d.frame != first.frame {
                return Err(Error::MixedFrames {
                    expected: first.frame,
                    found: d.frame,
                });
            }
        }
    }
    Ok(())
}

/// Group same-frame detections into connected components of the graph whose
/// edges are pairs with IoU strictly greater than `tau_prime`.
pub fn cluster_detections(dets: &[Detection], tau_prime: f64) -> Result<Vec<Cluster>> {
    check_single_frame(dets)?;
    let n = dets.len();

    // Union-find over detection indices.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if iou(&dets[i].bbox, &dets[j].bbox) > tau_prime {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    Ok(groups
        .into_values()
        .map(|members| {
            let ordered = canonical_order(dets, &members);
            let score =
                ordered.iter().map(|&i| dets[i].confidence).sum::<f64>() / members.len() as f64;
            Cluster {
                member_indices: members,
                score,
            }
        })
        .collect())
}

/// Member indices reordered by detection content rather than input position,
/// so floating-point reductions come out bit-identical under input
/// permutation.
fn canonical_order(dets: &[Detection], members: &[usize]) -> Vec<usize> {
    let mut ordered = members.to_vec();
    ordered.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        da.expert_id
            .cmp(&db.expert_id)
            .then(da.bbox.x.total_cmp(&db.bbox.x))
            .then(da.bbox.y.total_cmp(&db.bbox.y))
            .then(da.bbox.w.total_cmp(&db.bbox.w))
            .then(da.bbox.h.total_cmp(&db.bbox.h))
            .then(da.confidence.total_cmp(&db.confidence))
    });
    ordered
}

fn mean_box(dets: &[Detection], members: &[usize]) -> BoundingBox {
    let n = members.len() as f64;
    let mut acc = [0.0f64; 4];
    for i in canonical_order(dets, members) {
        let b = &dets[i].bbox;
        acc[0] += b.x;
        acc[1] += b.y;
        acc[2] += b.w;
        acc[3] += b.h;
    }
    BoundingBox {
        x: acc[0] / n,
        y: acc[1] / n,
        w: acc[2] / n,
        h: acc[3] / n,
    }
}

fn distinct_experts(dets: &[Detection], members: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = members.iter().map(|&i| dets[i].expert_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Fuse one frame's detections into a consensus observation.
///
/// Clusters supported by fewer than two distinct experts are discarded; among
/// survivors the cluster with the highest mean confidence wins. Ties break by
/// supporter count, then by the highest single member confidence, then by the
/// fused box coordinates and expert ids so the result never depends on input
/// order.
pub fn fuse_frame(dets: &[Detection], tau_prime: f64) -> Result<Option<FusedObservation>> {
    if dets.is_empty() {
        return Ok(None);
    }
    let clusters = cluster_detections(dets, tau_prime)?;

    struct Candidate {
        score: f64,
        support: usize,
        max_conf: f64,
        bbox: BoundingBox,
        experts: Vec<String>,
    }

    let mut best: Option<Candidate> = None;
    for c in &clusters {
        let experts = distinct_experts(dets, &c.member_indices);
        if experts.len() < 2 {
            continue;
        }
        let cand = Candidate {
            score: c.score,
            support: experts.len(),
            max_conf: c
                .member_indices
                .iter()
                .map(|&i| dets[i].confidence)
                .fold(f64::NEG_INFINITY, f64::max),
            bbox: mean_box(dets, &c.member_indices),
            experts,
        };
        let wins = match &best {
            None => true,
            Some(b) => {
                let key = |c: &Candidate| {
                    (
                        c.score,
                        c.support as f64,
                        c.max_conf,
                        -c.bbox.x,
                        -c.bbox.y,
                        -c.bbox.w,
                        -c.bbox.h,
                    )
                };
                match key(&cand).partial_cmp(&key(b)) {
                    Some(std::cmp::Ordering::Greater) => true,
                    Some(std::cmp::Ordering::Less) => false,
                    _ => cand.experts < b.experts,
                }
            }
        };
        if wins {
            best = Some(cand);
        }
    }

    Ok(best.map(|b| FusedObservation {
        frame: dets[0].frame,
        bbox: b.bbox,
        support: b.support,
        score: b.score,
        experts: b.experts,
    }))
}

/// Apply [`fuse_frame`] per frame. Only frames with a surviving cluster
/// appear in the result.
pub fn fuse_sequence(
    dets: &[Detection],
    tau_prime: f64,
) -> Result<BTreeMap<u64, FusedObservation>> {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_frame.entry(d.frame).or_default().push(d.clone());
    }
    let mut out = BTreeMap::new();
    for (frame, frame_dets) in by_frame {
        if let Some(fused) = fuse_frame(&frame_dets, tau_prime)? {
            out.insert(frame, fused);
        }
    }
    Ok(out)
}
