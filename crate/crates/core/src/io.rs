//! File formats: JSONL record types, trajectory CSVs, and atomic writes.
//!
//! Every writer builds the full byte buffer first and renames a temp file
//! over the destination, so identical inputs always produce byte-identical
//! files and readers never observe partial output. Timestamps appear only
//! in the `.meta.json` sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{apply_transform, BoundingBox, RigidTransform};
use crate::error::{Error, Result};
use crate::fusion::{Detection, FusedObservation};
use crate::refine::Trajectory3D;
use crate::smoothing::Trajectory2D;

/// Interpretation of the 4-element `box` field in detection JSONL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxFormat {
    /// `[center_x, center_y, width, height]` (the native format).
    #[default]
    Center,
    /// `[left, top, width, height]`.
    Corner,
}

impl std::str::FromStr for BoxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(BoxFormat::Center),
            "corner" => Ok(BoxFormat::Corner),
            other => Err(Error::Config(format!(
                "unknown box format '{other}' (expected center|corner)"
            ))),
        }
    }
}

/// One detection line: `{"clip_id", "frame", "expert", "box", "conf"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub clip_id: String,
    pub frame: u64,
    pub expert: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub conf: f64,
}

impl DetectionRecord {
    pub fn into_detection(self, fmt: BoxFormat) -> Result<(String, Detection)> {
        let [a, b, w, h] = self.bbox;
        let bbox = match fmt {
            BoxFormat::Center => BoundingBox::new(a, b, w, h)?,
            BoxFormat::Corner => BoundingBox::from_corner(a, b, w, h)?,
        };
        let det = Detection {
            frame: self.frame,
            expert_id: self.expert,
            bbox,
            confidence: self.conf,
        };
        det.validate()?;
        Ok((self.clip_id, det))
    }

    pub fn from_detection(clip_id: &str, det: &Detection) -> Self {
        DetectionRecord {
            clip_id: clip_id.to_string(),
            frame: det.frame,
            expert: det.expert_id.clone(),
            bbox: [det.bbox.x, det.bbox.y, det.bbox.w, det.bbox.h],
            conf: det.confidence,
        }
    }
}

/// One fused-observation line; boxes are always center-format here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    pub clip_id: String,
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub support: usize,
    pub score: f64,
    pub experts: Vec<String>,
}

impl FusedRecord {
    pub fn from_fused(clip_id: &str, obs: &FusedObservation) -> Self {
        FusedRecord {
            clip_id: clip_id.to_string(),
            frame: obs.frame,
            bbox: [obs.bbox.x, obs.bbox.y, obs.bbox.w, obs.bbox.h],
            support: obs.support,
            score: obs.score,
            experts: obs.experts.clone(),
        }
    }

    pub fn into_fused(self) -> Result<(String, FusedObservation)> {
        let [x, y, w, h] = self.bbox;
        Ok((
            self.clip_id,
            FusedObservation {
                frame: self.frame,
                bbox: BoundingBox::new(x, y, w, h)?,
                support: self.support,
                score: self.score,
                experts: self.experts,
            },
        ))
    }
}

/// Ground-truth category for one clip, for accuracy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLabelRecord {
    pub clip_id: String,
    pub label: String,
}

/// Write bytes via a sibling temp file plus rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Strict JSONL reader: any malformed line aborts with its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Lenient JSONL reader: malformed lines are logged with their line number
/// and skipped instead of aborting the run.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(item) => out.push(item),
            Err(e) => log::warn!("{}:{}: skipping malformed line: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Serialize items as JSONL and write atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Numerical(e.to_string()))?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Group detection records by clip, sorted by (clip, frame, expert).
pub fn group_detections(
    records: Vec<DetectionRecord>,
    fmt: BoxFormat,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in records {
        let (clip, det) = r.into_detection(fmt)?;
        out.entry(clip).or_default().push(det);
    }
    for dets in out.values_mut() {
        dets.sort_by(|a, b| (a.frame, &a.expert_id).cmp(&(b.frame, &b.expert_id)));
    }
    Ok(out)
}

/// Group fused records by clip and frame.
pub fn group_fused(
    records: Vec<FusedRecord>,
) -> Result<BTreeMap<String, BTreeMap<u64, FusedObservation>>> {
    let mut out: BTreeMap<String, BTreeMap<u64, FusedObservation>> = BTreeMap::new();
    for r in records {
        let (clip, obs) = r.into_fused()?;
        out.entry(clip).or_default().insert(obs.frame, obs);
    }
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write per-clip 3D trajectories:
/// `clip_id,frame,X,Y,Z,Vx,Vy,Vz,z_raw[,Xw,Yw,Zw]`. The world columns
/// appear only when an extrinsic transform is supplied; `z_raw` is empty on
/// prediction-only frames.
pub fn write_traj3d(
    path: &Path,
    trajectories: &BTreeMap<String, Trajectory3D>,
    transform: Option<&RigidTransform>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "clip_id", "frame", "X", "Y", "Z", "Vx", "Vy", "Vz", "z_raw",
    ];
    if transform.is_some() {
        header.extend_from_slice(&["Xw", "Yw", "Zw"]);
    }
    w.write_record(&header)?;
    for (clip, traj) in trajectories {
        traj.validate()?;
        for (((frame, p), v), raw) in traj
            .frames
            .iter()
            .zip(&traj.positions)
            .zip(&traj.velocities)
            .zip(&traj.raw_depths)
        {
            let mut row = vec![
                clip.clone(),
                frame.to_string(),
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.z),
                fmt_f64(v.x),
                fmt_f64(v.y),
                fmt_f64(v.z),
                raw.map(fmt_f64).unwrap_or_default(),
            ];
            if let Some(t) = transform {
                let pw = apply_transform(p, t);
                row.push(fmt_f64(pw.x));
                row.push(fmt_f64(pw.y));
                row.push(fmt_f64(pw.z));
            }
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what}: '{s}'"),
    })
}

/// Read trajectories written by [`write_traj3d`]; world columns, when
/// present, are ignored (evaluation runs in the camera frame).
pub fn read_traj3d(path: &Path) -> Result<BTreeMap<String, Trajectory3D>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column '{name}'"),
            })
    };
    let (ci, fi) = (idx("clip_id")?, idx("frame")?);
    let pi = [idx("X")?, idx("Y")?, idx("Z")?];
    let vi = [idx("Vx")?, idx("Vy")?, idx("Vz")?];
    let ri = idx("z_raw")?;

    let mut rows: BTreeMap<String, Vec<(u64, Point3<f64>, Vector3<f64>, Option<f64>)>> =
        BTreeMap::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let get = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: "short row".into(),
            })
        };
        let frame: u64 = parse_field(get(fi)?, line, "frame")?;
        let p = Point3::new(
            parse_field(get(pi[0])?, line, "X")?,
            parse_field(get(pi[1])?, line, "Y")?,
            parse_field(get(pi[2])?, line, "Z")?,
        );
        let v = Vector3::new(
            parse_field(get(vi[0])?, line, "Vx")?,
            parse_field(get(vi[1])?, line, "Vy")?,
            parse_field(get(vi[2])?, line, "Vz")?,
        );
        let raw = match get(ri)? {
            "" => None,
            s => Some(parse_field(s, line, "z_raw")?),
        };
        rows.entry(get(ci)?.to_string())
            .or_default()
            .push((frame, p, v, raw));
    }

    let mut out = BTreeMap::new();
    for (clip, mut items) in rows {
        items.sort_by_key(|r| r.0);
        let mut traj = Trajectory3D {
            frames: Vec::with_capacity(items.len()),
            positions: Vec::with_capacity(items.len()),
            velocities: Vec::with_capacity(items.len()),
            raw_depths: Vec::with_capacity(items.len()),
        };
        for (f, p, v, raw) in items {
            traj.frames.push(f);
            traj.positions.push(p);
            traj.velocities.push(v);
            traj.raw_depths.push(raw);
        }
        out.insert(clip, traj);
    }
    Ok(out)
}

/// Write per-clip 2D trajectories: `clip_id,frame,u,v,u_smooth,v_smooth`.
pub fn write_traj2d(path: &Path, trajectories: &BTreeMap<String, Trajectory2D>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_id", "frame", "u", "v", "u_smooth", "v_smooth"])?;
    for (clip, traj) in trajectories {
        traj.validate()?;
        for ((frame, p), s) in traj.frames.iter().zip(&traj.points).zip(&traj.smoothed) {
            w.write_record(&[
                clip.clone(),
                frame.to_string(),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(s[0]),
                fmt_f64(s[1]),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Read trajectories written by [`write_traj2d`].
pub fn read_traj2d(path: &Path) -> Result<BTreeMap<String, Trajectory2D>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: BTreeMap<String, Vec<(u64, [f64; 2], [f64; 2])>> = BTreeMap::new();
    for (n, rec) in reader.deserialize::<(String, u64, f64, f64, f64, f64)>().enumerate() {
        let (clip, frame, u, v, us, vs) = rec.map_err(|e| Error::Parse {
            line: n + 2,
            msg: e.to_string(),
        })?;
        rows.entry(clip).or_default().push((frame, [u, v], [us, vs]));
    }
    let mut out = BTreeMap::new();
    for (clip, mut items) in rows {
        items.sort_by_key(|r| r.0);
        let mut traj = Trajectory2D {
            frames: Vec::new(),
            points: Vec::new(),
            smoothed: Vec::new(),
        };
        for (f, p, s) in items {
            traj.frames.push(f);
            traj.points.push(p);
            traj.smoothed.push(s);
        }
        out.insert(clip, traj);
    }
    Ok(out)
}

/// Write sweep rows as `gamma_q_z,gamma_r_h,depth_error`.
pub fn write_sweep(path: &Path, rows: &[crate::sim::SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gamma_q_z", "gamma_r_h", "depth_error"])?;
    for r in rows {
        w.write_record(&[fmt_f64(r.gamma_q_z), fmt_f64(r.gamma_r_h), fmt_f64(r.depth_error)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Run provenance for one output file; the only place timestamps go.
#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub tool: &'a str,
    pub version: &'a str,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
}

/// Write `<output>.meta.json` next to an output file.
pub fn write_meta(output: &Path, meta: &Meta) -> Result<()> {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let path: PathBuf = output.with_file_name(name);
    let mut bytes =
        serde_json::to_vec_pretty(meta).map_err(|e| Error::Numerical(e.to_string()))?;
    bytes.push(b'\n');
    atomic_write(&path, &bytes)
}
