//! `uavtraj`: every pipeline stage as a subcommand, plus the synthetic
//! scenario generator, the noise-parameter sweep, and trajectory
//! evaluation. Data goes to files or stdout, logs to stderr; outputs are
//! written atomically and re-runs on identical inputs are byte-identical
//! (run timestamps live in `<output>.meta.json` sidecars only).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use uavtraj::classification::ClipLabel;
use uavtraj::config::PipelineConfig;
use uavtraj::filtering::{run_filter, PromptManifest, ScoreRecord};
use uavtraj::fusion::fuse_sequence;
use uavtraj::io::{
    group_detections, group_fused, read_jsonl, read_jsonl_lenient, read_traj2d, read_traj3d,
    write_jsonl, write_meta, write_sweep, write_traj2d, write_traj3d, BoxFormat, DetectionRecord,
    FusedRecord, Meta, TruthLabelRecord,
};
use uavtraj::pipeline::{accuracy_by_id, clip_h_real, evaluate, run_pipeline, vote_all_clips};
use uavtraj::refine::{refine_observations, refine_track, Trajectory3D};
use uavtraj::sim::{default_prompt_manifest, generate, sweep};
use uavtraj::smoothing::{smooth_trajectory, Trajectory2D};

#[derive(Parser)]
#[command(name = "uavtraj", version, about = "UAV trajectory pseudo-labeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score clips for UAV visibility and camera stability, emitting one
    /// accept/reject verdict per clip.
    Filter {
        /// Per-frame prompt scores (JSONL).
        #[arg(long)]
        scores: PathBuf,
        /// Prompt manifest JSON; built-in prompts when omitted.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output verdicts (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-expert detections into consensus boxes, frame by frame.
    Fuse {
        /// Detection records (JSONL).
        #[arg(long)]
        detections: PathBuf,
        /// Interpretation of the 4-element box: center|corner.
        #[arg(long, default_value = "center")]
        box_format: BoxFormat,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output fused observations (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth fused box centers with a least-squares B-spline.
    Smooth {
        /// Fused observations (JSONL).
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output 2D trajectories (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Vote clip-level category labels from per-frame labels.
    Classify {
        /// Frame labels (JSONL).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output clip labels (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Lift fused 2D observations to 3D trajectories with the EKF.
    Refine {
        /// Fused observations (JSONL); box heights always come from here.
        #[arg(long)]
        fused: PathBuf,
        /// Smoothed 2D trajectories (CSV). When given, spline-smoothed
        /// centers replace the raw ones.
        #[arg(long)]
        traj2d: Option<PathBuf>,
        /// Clip labels (JSONL) for size-prior lookup; the configured
        /// default height is used otherwise.
        #[arg(long)]
        clip_labels: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output 3D trajectories (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run filter → fuse → smooth → classify → refine in one pass.
    Pipeline {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "center")]
        box_format: BoxFormat,
        /// Feed the EKF raw box centers instead of spline-smoothed ones.
        #[arg(long)]
        raw_uv: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for all outputs.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic scenario: truth, detections, labels, scores.
    Simulate {
        /// Config with a [scenario] section.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Grid-sweep the noise scale factors and report depth error per cell.
    Sweep {
        /// Config with a [scenario] section.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated process-noise scales (depth rows).
        #[arg(long, default_value = "0.5,0.8,1.0,1.5,2.0")]
        gamma_q: String,
        /// Comma-separated measurement-noise scales (height columns).
        #[arg(long, default_value = "0.5,0.8,1.0,1.5,2.0")]
        gamma_r: String,
        /// Observation streams averaged per cell.
        #[arg(long, default_value_t = 5)]
        runs: u64,
        /// Output table (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare estimated trajectories against ground truth.
    Eval {
        /// Estimated 3D trajectories (CSV).
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth 3D trajectories (CSV).
        #[arg(long)]
        truth: PathBuf,
        /// Predicted clip labels (JSONL), for clip accuracy.
        #[arg(long)]
        pred_labels: Option<PathBuf>,
        /// True clip labels (JSONL: {"clip_id", "label"}).
        #[arg(long)]
        truth_labels: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Filter { scores, prompts, config, out } => {
            cmd_filter(&scores, prompts.as_deref(), config.as_deref(), &out)
        }
        Command::Fuse { detections, box_format, config, out } => {
            cmd_fuse(&detections, box_format, config.as_deref(), &out)
        }
        Command::Smooth { fused, config, out } => cmd_smooth(&fused, config.as_deref(), &out),
        Command::Classify { labels, config, out } => {
            cmd_classify(&labels, config.as_deref(), &out)
        }
        Command::Refine { fused, traj2d, clip_labels, config, out } => cmd_refine(
            &fused,
            traj2d.as_deref(),
            clip_labels.as_deref(),
            config.as_deref(),
            &out,
        ),
        Command::Pipeline {
            detections,
            scores,
            prompts,
            labels,
            box_format,
            raw_uv,
            config,
            out_dir,
        } => cmd_pipeline(
            &detections,
            scores.as_deref(),
            prompts.as_deref(),
            labels.as_deref(),
            box_format,
            raw_uv,
            config.as_deref(),
            &out_dir,
        ),
        Command::Simulate { config, out_dir } => cmd_simulate(&config, &out_dir),
        Command::Sweep { config, gamma_q, gamma_r, runs, out } => {
            cmd_sweep(&config, &gamma_q, &gamma_r, runs, &out)
        }
        Command::Eval { est, truth, pred_labels, truth_labels, json } => cmd_eval(
            &est,
            &truth,
            pred_labels.as_deref(),
            truth_labels.as_deref(),
            json.as_deref(),
        ),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::from_path(p)
            .with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(path: Option<&Path>) -> Result<PromptManifest> {
    match path {
        Some(p) => {
            let bytes =
                fs::read(p).with_context(|| format!("reading prompts {}", p.display()))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing prompts {}", p.display()))
        }
        None => Ok(default_prompt_manifest()),
    }
}

/// Sidecar provenance for one output file.
fn stamp(out: &Path, cfg: &PipelineConfig, inputs: &[&Path]) -> Result<()> {
    let meta = Meta {
        tool: "uavtraj",
        version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: serde_json::to_value(cfg)?,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_meta(out, &meta)?;
    Ok(())
}

fn cmd_filter(
    scores: &Path,
    prompts: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let records: Vec<ScoreRecord> = read_jsonl_lenient(scores)
        .with_context(|| format!("reading scores {}", scores.display()))?;
    let manifest = load_manifest(prompts)?;
    let verdicts = run_filter(&records, &manifest, &cfg.filter_params());
    let accepted = verdicts
        .iter()
        .filter(|v| v.decision == uavtraj::filtering::Decision::Accept)
        .count();
    log::info!("{} clips scored, {accepted} accepted", verdicts.len());
    write_jsonl(out, &verdicts)?;
    stamp(out, &cfg, &[scores])
}

fn cmd_fuse(
    detections: &Path,
    box_format: BoxFormat,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let records: Vec<DetectionRecord> = read_jsonl(detections)
        .with_context(|| format!("reading detections {}", detections.display()))?;
    let grouped = group_detections(records, box_format)?;

    let mut lines = Vec::new();
    for (clip, dets) in &grouped {
        let fused = fuse_sequence(dets, cfg.thresholds.tau_prime)?;
        lines.extend(fused.values().map(|o| FusedRecord::from_fused(clip, o)));
    }
    log::info!("{} fused observations from {} clips", lines.len(), grouped.len());
    write_jsonl(out, &lines)?;
    stamp(out, &cfg, &[detections])
}

fn cmd_smooth(fused: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let grouped = group_fused(
        read_jsonl(fused).with_context(|| format!("reading fused {}", fused.display()))?,
    )?;
    let mut trajectories = BTreeMap::new();
    for (clip, obs) in &grouped {
        let traj = smooth_trajectory(
            &Trajectory2D::from_fused(obs),
            cfg.spline.degree,
            cfg.spline.knot_spacing,
        )?;
        trajectories.insert(clip.clone(), traj);
    }
    write_traj2d(out, &trajectories)?;
    stamp(out, &cfg, &[fused])
}

fn cmd_classify(labels: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let frame_labels = read_jsonl(labels)
        .with_context(|| format!("reading labels {}", labels.display()))?;
    let clips = vote_all_clips(&frame_labels, cfg.thresholds.n, cfg.thresholds.rho)?;
    write_jsonl(out, &clips)?;
    stamp(out, &cfg, &[labels])
}

fn cmd_refine(
    fused: &Path,
    traj2d: Option<&Path>,
    clip_labels: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let k = cfg.intrinsics()?;
    let extrinsic = cfg.extrinsic_transform()?;
    let grouped = group_fused(
        read_jsonl(fused).with_context(|| format!("reading fused {}", fused.display()))?,
    )?;
    let smoothed = traj2d
        .map(|p| read_traj2d(p).with_context(|| format!("reading traj2d {}", p.display())))
        .transpose()?;
    let voted: Vec<ClipLabel> = clip_labels
        .map(|p| read_jsonl(p).with_context(|| format!("reading clip labels {}", p.display())))
        .transpose()?
        .unwrap_or_default();

    let mut trajectories = BTreeMap::new();
    for (clip, obs) in &grouped {
        let noise = cfg.noise_config(Some(clip_h_real(clip, &voted, &cfg)))?;
        let traj = match smoothed.as_ref().and_then(|m| m.get(clip)) {
            Some(t2) => {
                let triples: BTreeMap<u64, [f64; 3]> = t2
                    .frames
                    .iter()
                    .zip(&t2.smoothed)
                    .filter_map(|(&f, s)| obs.get(&f).map(|o| (f, [s[0], s[1], o.bbox.h])))
                    .collect();
                refine_observations(&triples, k, &noise, None)?
            }
            None => refine_track(obs, k, &noise, None)?,
        };
        trajectories.insert(clip.clone(), traj);
    }
    write_traj3d(out, &trajectories, extrinsic.as_ref())?;
    let mut inputs = vec![fused];
    inputs.extend(traj2d);
    inputs.extend(clip_labels);
    stamp(out, &cfg, &inputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_pipeline(
    detections: &Path,
    scores: Option<&Path>,
    prompts: Option<&Path>,
    labels: Option<&Path>,
    box_format: BoxFormat,
    raw_uv: bool,
    config: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let detection_records: Vec<DetectionRecord> = read_jsonl(detections)
        .with_context(|| format!("reading detections {}", detections.display()))?;
    let grouped = group_detections(detection_records, box_format)?;

    let score_records: Option<Vec<ScoreRecord>> = scores
        .map(|p| read_jsonl_lenient(p).with_context(|| format!("reading scores {}", p.display())))
        .transpose()?;
    let manifest = load_manifest(prompts)?;
    let frame_labels = labels
        .map(|p| read_jsonl(p).with_context(|| format!("reading labels {}", p.display())))
        .transpose()?
        .unwrap_or_default();

    let output = run_pipeline(
        &grouped,
        score_records.as_deref().map(|r| (r, &manifest)),
        &frame_labels,
        &cfg,
        !raw_uv,
    )?;

    let mut inputs: Vec<&Path> = vec![detections];
    inputs.extend(scores);
    inputs.extend(prompts);
    inputs.extend(labels);

    if let Some(verdicts) = &output.verdicts {
        let path = out_dir.join("verdicts.jsonl");
        write_jsonl(&path, verdicts)?;
        stamp(&path, &cfg, &inputs)?;
    }
    if labels.is_some() {
        let path = out_dir.join("cliplabels.jsonl");
        write_jsonl(&path, &output.clip_labels)?;
        stamp(&path, &cfg, &inputs)?;
    }

    let fused_path = out_dir.join("fused.jsonl");
    let mut fused_lines = Vec::new();
    for (clip, obs) in &output.fused {
        fused_lines.extend(obs.values().map(|o| FusedRecord::from_fused(clip, o)));
    }
    write_jsonl(&fused_path, &fused_lines)?;
    stamp(&fused_path, &cfg, &inputs)?;

    let traj2d_path = out_dir.join("traj2d.csv");
    write_traj2d(&traj2d_path, &output.traj2d)?;
    stamp(&traj2d_path, &cfg, &inputs)?;

    let traj3d_path = out_dir.join("traj3d.csv");
    write_traj3d(&traj3d_path, &output.traj3d, cfg.extrinsic_transform()?.as_ref())?;
    stamp(&traj3d_path, &cfg, &inputs)?;

    log::info!(
        "pipeline: {} clips in, {} trajectories out",
        grouped.len(),
        output.traj3d.len()
    );
    Ok(())
}

fn cmd_simulate(config: &Path, out_dir: &Path) -> Result<()> {
    let cfg = load_config(Some(config))?;
    let scn = cfg.scenario()?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let (truth, detections, labels, scores) = generate(scn)?;

    let det_path = out_dir.join("detections.jsonl");
    let records: Vec<DetectionRecord> = detections
        .iter()
        .map(|d| DetectionRecord::from_detection("sim", d))
        .collect();
    write_jsonl(&det_path, &records)?;
    stamp(&det_path, &cfg, &[config])?;

    let truth_path = out_dir.join("truth.csv");
    let truth_map = BTreeMap::from([("sim".to_string(), truth)]);
    write_traj3d(&truth_path, &truth_map, None)?;
    stamp(&truth_path, &cfg, &[config])?;

    let labels_path = out_dir.join("labels.jsonl");
    write_jsonl(&labels_path, &labels)?;
    stamp(&labels_path, &cfg, &[config])?;

    let scores_path = out_dir.join("scores.jsonl");
    write_jsonl(&scores_path, &scores)?;
    stamp(&scores_path, &cfg, &[config])?;

    let prompts_path = out_dir.join("prompts.json");
    let mut bytes = serde_json::to_vec_pretty(&default_prompt_manifest())?;
    bytes.push(b'\n');
    uavtraj::io::atomic_write(&prompts_path, &bytes)?;
    stamp(&prompts_path, &cfg, &[config])?;

    log::info!(
        "scenario: {} frames, {} detections",
        truth_map["sim"].frames.len(),
        records.len()
    );
    Ok(())
}

fn parse_gammas(arg: &str, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = arg
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad {what} value '{s}'"))
        })
        .collect::<Result<_>>()?;
    anyhow::ensure!(!values.is_empty(), "{what} list is empty");
    Ok(values)
}

fn cmd_sweep(config: &Path, gamma_q: &str, gamma_r: &str, runs: u64, out: &Path) -> Result<()> {
    let cfg = load_config(Some(config))?;
    let scn = cfg.scenario()?;
    let qs = parse_gammas(gamma_q, "gamma_q")?;
    let rs = parse_gammas(gamma_r, "gamma_r")?;
    let grid: Vec<(f64, f64)> = qs
        .iter()
        .flat_map(|&q| rs.iter().map(move |&r| (q, r)))
        .collect();
    let rows = sweep(scn, &grid, runs)?;
    write_sweep(out, &rows)?;
    stamp(out, &cfg, &[config])
}

fn cmd_eval(
    est: &Path,
    truth: &Path,
    pred_labels: Option<&Path>,
    truth_labels: Option<&Path>,
    json: Option<&Path>,
) -> Result<()> {
    let est_map: BTreeMap<String, Trajectory3D> =
        read_traj3d(est).with_context(|| format!("reading {}", est.display()))?;
    let truth_map = read_traj3d(truth)
        .with_context(|| format!("reading {}", truth.display()))?;
    let mut report = evaluate(&est_map, &truth_map)?;

    if let (Some(pred_path), Some(truth_path)) = (pred_labels, truth_labels) {
        let predicted: Vec<ClipLabel> = read_jsonl(pred_path)
            .with_context(|| format!("reading {}", pred_path.display()))?;
        let truth_records: Vec<TruthLabelRecord> = read_jsonl(truth_path)
            .with_context(|| format!("reading {}", truth_path.display()))?;
        let truth_table: BTreeMap<String, String> = truth_records
            .into_iter()
            .map(|r| (r.clip_id, r.label))
            .collect();
        report.overall.clip_accuracy = Some(accuracy_by_id(&predicted, &truth_table)?);
    }

    println!("clips evaluated: {} ({} frames)", report.clips, report.frames);
    println!("e3d:  {:.6} m^2", report.overall.e3d);
    println!("rmse: {:.6} m", report.overall.rmse);
    println!(
        "d_x/d_y/d_z: {:.6} / {:.6} / {:.6} m",
        report.overall.d_x, report.overall.d_y, report.overall.d_z
    );
    if let Some(acc) = report.overall.clip_accuracy {
        println!("clip accuracy: {acc:.3}");
    }
    for (clip, m) in &report.per_clip {
        println!("  {clip}: rmse {:.6} m (e3d {:.6} m^2)", m.rmse, m.e3d);
    }

    if let Some(path) = json {
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        uavtraj::io::atomic_write(path, &bytes)?;
    }
    Ok(())
}
