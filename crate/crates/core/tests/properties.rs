//! Randomized invariant checks across the pipeline stages.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, Point3, Rotation3, Vector3, Vector6};
use proptest::prelude::*;

use uavtraj::camera::{
    apply_transform, back_project, depth_from_height, project, BoundingBox, CameraIntrinsics,
    RigidTransform,
};
use uavtraj::classification::{vote_clip, FrameLabel, LabelStatus};
use uavtraj::filtering::{aggregate_clip, score_frame, Decision, FilterParams, ScoreRecord};
use uavtraj::fusion::{fuse_frame, iou, Detection};
use uavtraj::refine::{refine_observations, update, FilterState, NoiseConfig};
use uavtraj::sim::{default_prompt_manifest, e3d};
use uavtraj::smoothing::{smooth_trajectory, Trajectory2D};
use uavtraj::refine::Trajectory3D;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(1000.0, 1000.0, 640.0, 360.0).unwrap()
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (-500.0..500.0f64, -500.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

fn detections_one_frame() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0usize..6, bbox(), 0.0..=1.0f64), 1..12).prop_map(|raw| {
        raw.into_iter()
            .map(|(e, bbox, confidence)| Detection {
                frame: 0,
                expert_id: format!("e{e}"),
                bbox,
                confidence,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn camera_project_back_project_round_trip(
        x in -50.0..50.0f64,
        y in -50.0..50.0f64,
        z in 0.1..1000.0f64,
    ) {
        let k = intrinsics();
        let p = Point3::new(x, y, z);
        let m = project(&p, &k, 0.5).unwrap();
        let q = back_project(m[0], m[1], z, &k).unwrap();
        prop_assert!((q - p).norm() < 1e-9);
        let z_back = depth_from_height(m[2], k.fy, 0.5).unwrap();
        prop_assert!((z_back - z).abs() / z < 1e-12);
    }

    #[test]
    fn camera_rigid_transform_preserves_distances(
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.0..3.0f64,
        t in prop::array::uniform3(-10.0..10.0f64),
        a in prop::array::uniform3(-20.0..20.0f64),
        b in prop::array::uniform3(-20.0..20.0f64),
    ) {
        let axis_v = Vector3::from_row_slice(&axis);
        prop_assume!(axis_v.norm() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis_v), angle);
        let tf = RigidTransform::new(*rot.matrix(), Vector3::from_row_slice(&t)).unwrap();
        let pa = Point3::from(Vector3::from_row_slice(&a));
        let pb = Point3::from(Vector3::from_row_slice(&b));
        let d_before = (pa - pb).norm();
        let d_after = (apply_transform(&pa, &tf) - apply_transform(&pb, &tf)).norm();
        prop_assert!((d_before - d_after).abs() < 1e-9);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab.to_bits(), iou(&b, &a).to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_order_independent(
        dets in detections_one_frame(),
        tau_prime in 0.0..0.9f64,
    ) {
        let base = fuse_frame(&dets, tau_prime).unwrap();
        let mut shuffled = dets;
        shuffled.reverse();
        let rev = fuse_frame(&shuffled, tau_prime).unwrap();
        prop_assert_eq!(base, rev);
    }

    #[test]
    fn fusion_output_in_input_hull_with_support(
        dets in detections_one_frame(),
        tau_prime in 0.0..0.9f64,
    ) {
        if let Some(fused) = fuse_frame(&dets, tau_prime).unwrap() {
            prop_assert!(fused.support >= 2);
            prop_assert_eq!(fused.support, fused.experts.len());
            for dim in 0..4 {
                let coord = |b: &BoundingBox| match dim {
                    0 => b.x,
                    1 => b.y,
                    2 => b.w,
                    _ => b.h,
                };
                let lo = dets.iter().map(|d| coord(&d.bbox)).fold(f64::INFINITY, f64::min);
                let hi = dets.iter().map(|d| coord(&d.bbox)).fold(f64::NEG_INFINITY, f64::max);
                let c = coord(&fused.bbox);
                prop_assert!(c >= lo - 1e-9 && c <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn fusion_single_expert_never_fuses(
        boxes in prop::collection::vec(bbox(), 1..8),
        tau_prime in 0.0..0.9f64,
    ) {
        let dets: Vec<Detection> = boxes
            .into_iter()
            .map(|bbox| Detection { frame: 0, expert_id: "only".into(), bbox, confidence: 0.9 })
            .collect();
        prop_assert_eq!(fuse_frame(&dets, tau_prime).unwrap(), None);
    }

    #[test]
    fn spline_reproduces_cubics(
        a in -10.0..10.0f64,
        b in -2.0..2.0f64,
        c in -0.05..0.05f64,
        d in -0.002..0.002f64,
        n in 8usize..40,
    ) {
        let frames: Vec<u64> = (0..n as u64).collect();
        let poly = |t: f64| a + b * t + c * t * t + d * t * t * t;
        let points: Vec<[f64; 2]> = frames.iter().map(|&f| {
            let t = f as f64;
            [poly(t), poly(t) - 3.0]
        }).collect();
        let traj = Trajectory2D { frames: frames.clone(), points: points.clone(), smoothed: points };
        let out = smooth_trajectory(&traj, 3, 5.0).unwrap();
        prop_assert_eq!(&out.frames, &frames);
        for (i, &f) in frames.iter().enumerate() {
            let t = f as f64;
            prop_assert!((out.smoothed[i][0] - poly(t)).abs() < 1e-6);
            prop_assert!((out.smoothed[i][1] - (poly(t) - 3.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn spline_shift_equivariant(
        values in prop::collection::vec((0.0..500.0f64, 0.0..500.0f64), 4..50),
        offset in -100.0..100.0f64,
    ) {
        let frames: Vec<u64> = (0..values.len() as u64).collect();
        let points: Vec<[f64; 2]> = values.iter().map(|&(u, v)| [u, v]).collect();
        let shifted: Vec<[f64; 2]> = points.iter().map(|p| [p[0] + offset, p[1] + offset]).collect();
        let base = smooth_trajectory(
            &Trajectory2D { frames: frames.clone(), points: points.clone(), smoothed: points },
            3,
            5.0,
        ).unwrap();
        let moved = smooth_trajectory(
            &Trajectory2D { frames: frames.clone(), points: shifted.clone(), smoothed: shifted },
            3,
            5.0,
        ).unwrap();
        prop_assert_eq!(base.smoothed.len(), moved.smoothed.len());
        for (p, q) in base.smoothed.iter().zip(&moved.smoothed) {
            prop_assert!((q[0] - p[0] - offset).abs() < 1e-9);
            prop_assert!((q[1] - p[1] - offset).abs() < 1e-9);
        }
    }
}

fn score_records() -> impl Strategy<Value = Vec<ScoreRecord>> {
    prop::collection::vec(prop::array::uniform4(-0.5..0.5f64), 1..30).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, [pos, neg, st, dy])| {
                let mut scores = BTreeMap::new();
                scores.insert("vis_pos".to_string(), pos);
                scores.insert("vis_neg".to_string(), neg);
                scores.insert("view_static".to_string(), st);
                scores.insert("view_dynamic".to_string(), dy);
                ScoreRecord { clip_id: "c".into(), frame: i as u64, scores }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn filtering_monotone_in_tau(
        records in score_records(),
        tau_lo in 0.0..0.5f64,
        bump in 0.0..0.5f64,
    ) {
        let manifest = default_prompt_manifest();
        let count = |tau: f64| {
            records
                .iter()
                .filter(|r| score_frame(r, &manifest, tau).unwrap().retained)
                .count()
        };
        prop_assert!(count(tau_lo + bump) <= count(tau_lo));
    }

    #[test]
    fn filtering_clip_thresholds_monotone(
        records in score_records(),
        rel_lo in 0.0..0.6f64,
        rel_bump in 0.0..0.4f64,
        static_lo in 0.0..0.6f64,
        static_bump in 0.0..0.4f64,
    ) {
        let manifest = default_prompt_manifest();
        let verdicts: Vec<_> = records
            .iter()
            .map(|r| score_frame(r, &manifest, 0.1).unwrap())
            .collect();
        let decide = |rel: f64, st: f64| {
            let params = FilterParams { tau: 0.1, rel_thresh: rel, static_thresh: st };
            aggregate_clip("c", &verdicts, &params).unwrap().decision
        };
        if decide(rel_lo + rel_bump, static_lo + static_bump) == Decision::Accept {
            prop_assert_eq!(decide(rel_lo, static_lo), Decision::Accept);
        }
    }

    #[test]
    fn filtering_margin_shift_invariant(
        records in score_records(),
        shift in -0.5..0.5f64,
        tau in 0.0..0.8f64,
    ) {
        let manifest = default_prompt_manifest();
        for r in &records {
            let mut shifted = r.clone();
            for id in ["vis_pos", "vis_neg"] {
                *shifted.scores.get_mut(id).unwrap() += shift;
            }
            let a = score_frame(r, &manifest, tau).unwrap();
            let b = score_frame(&shifted, &manifest, tau).unwrap();
            prop_assert!((a.margin - b.margin).abs() < 1e-12);
            prop_assert_eq!(a.retained, b.retained);
        }
    }
}

fn label_sequences() -> impl Strategy<Value = Vec<FrameLabel>> {
    prop::collection::vec((0usize..3, 0.0..=1.0f64), 1..20).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (l, confidence))| FrameLabel {
                clip_id: "c".into(),
                frame: i as u64,
                label: ["quad", "fixed_wing", "hybrid"][l].to_string(),
                confidence,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn vote_ignores_confidence_for_dominant_label(
        labels in label_sequences(),
        new_conf in 0.0..=1.0f64,
    ) {
        let base = vote_clip(&labels, 5, 0.9).unwrap();
        let mut reweighted = labels;
        for l in &mut reweighted {
            l.confidence = new_conf;
        }
        let other = vote_clip(&reweighted, 5, 0.9).unwrap();
        prop_assert_eq!(base.label, other.label);
    }

    #[test]
    fn vote_stable_under_duplication(labels in label_sequences()) {
        let base = vote_clip(&labels, 5, 0.9).unwrap();
        let mut doubled = labels.clone();
        doubled.extend(labels);
        let dup = vote_clip(&doubled, 5, 0.9).unwrap();
        prop_assert_eq!(base.label, dup.label);
    }

    #[test]
    fn confirmed_implies_window_agreement(
        labels in label_sequences(),
        rho in 0.5..=1.0f64,
    ) {
        let clip = vote_clip(&labels, 5, rho).unwrap();
        if clip.status == LabelStatus::Confirmed {
            let mut sorted = labels;
            sorted.sort_by_key(|l| l.frame);
            let best = sorted
                .windows(5)
                .map(|w| w.iter().filter(|l| l.label == clip.label).count() as f64 / 5.0)
                .fold(0.0, f64::max);
            prop_assert!(best >= rho);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_symmetric_nonnegative(
        steps in prop::collection::vec(prop::array::uniform3(-0.5..0.5f64), 1..40),
    ) {
        let k = intrinsics();
        let cfg = NoiseConfig::new(1.0, 1.0, 1.0 / 30.0, 0.5).unwrap();
        let mut state = FilterState {
            mean: Vector6::from_row_slice(&[0.0, 0.0, 10.0, 0.0, 0.0, 0.0]),
            covariance: Matrix6::from_diagonal(&Vector6::from_row_slice(&[1.0, 1.0, 4.0, 1.0, 1.0, 1.0])),
        };
        let mut target = Point3::new(0.0, 0.0, 10.0);
        for step in steps {
            target += Vector3::from_row_slice(&step);
            target.z = target.z.clamp(2.0, 80.0);
            let m = project(&target, &k, cfg.h_real).unwrap();
            state = uavtraj::refine::predict(&state, &cfg);
            prop_assert!(state.validate().is_ok());
            state = update(&state, &Vector3::new(m[0], m[1], m[2]), &k, &cfg).unwrap();
            prop_assert!(state.validate().is_ok());
        }
    }

    #[test]
    fn zero_innovation_is_pure_propagation(
        x0 in -10.0..10.0f64,
        y0 in -10.0..10.0f64,
        z0 in 5.0..50.0f64,
        vel in prop::array::uniform3(-0.5..0.5f64),
        n in 2u64..30,
    ) {
        let k = intrinsics();
        let cfg = NoiseConfig::new(1.0, 1.0, 1.0 / 30.0, 0.5).unwrap();
        let init = FilterState {
            mean: Vector6::from_row_slice(&[x0, y0, z0, vel[0], vel[1], vel[2]]),
            covariance: Matrix6::from_diagonal(&Vector6::from_row_slice(&[1.0, 1.0, 4.0, 1.0, 1.0, 1.0])),
        };
        let mut obs = BTreeMap::new();
        for t in 0..n {
            let dt = t as f64 * cfg.dt;
            let p = Point3::new(x0 + vel[0] * dt, y0 + vel[1] * dt, z0 + vel[2] * dt);
            let m = project(&p, &k, cfg.h_real).unwrap();
            obs.insert(t, [m[0], m[1], m[2]]);
        }
        let traj = refine_observations(&obs, &k, &cfg, Some(init)).unwrap();
        for (t, p) in traj.positions.iter().enumerate() {
            let dt = t as f64 * cfg.dt;
            let expected = Point3::new(x0 + vel[0] * dt, y0 + vel[1] * dt, z0 + vel[2] * dt);
            prop_assert!((p - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn metric_identities_hold(
        points in prop::collection::vec(
            (prop::array::uniform3(-50.0..50.0f64), prop::array::uniform3(-50.0..50.0f64)),
            1..60,
        ),
    ) {
        let traj = |pick: fn(&([f64; 3], [f64; 3])) -> [f64; 3]| Trajectory3D {
            frames: (0..points.len() as u64).collect(),
            positions: points.iter().map(|pair| Point3::from(Vector3::from_row_slice(&pick(pair)))).collect(),
            velocities: vec![Vector3::zeros(); points.len()],
            raw_depths: vec![None; points.len()],
        };
        let a = traj(|p| p.0);
        let b = traj(|p| p.1);
        let self_m = e3d(&a, &a).unwrap();
        prop_assert_eq!(self_m.e3d, 0.0);
        prop_assert_eq!(self_m.rmse, 0.0);
        let ab = e3d(&a, &b).unwrap();
        let ba = e3d(&b, &a).unwrap();
        prop_assert!((ab.e3d - ba.e3d).abs() < 1e-12);
        prop_assert!((ab.rmse * ab.rmse - ab.e3d).abs() <= 1e-12 * ab.e3d.max(1.0));
        prop_assert!(ab.d_x >= 0.0 && ab.d_y >= 0.0 && ab.d_z >= 0.0);
    }
}
