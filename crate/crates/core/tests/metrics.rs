use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use hpr_core::depth::DepthMap;
use hpr_core::eval::{
    associate_timestamps, ate, depth_metrics, pose_metrics, rpe, umeyama, Pose, PoseEvalOptions,
    Trajectory,
};

fn row(values: &[f64]) -> DepthMap {
    DepthMap::from_values(values.len(), 1, values.to_vec()).unwrap()
}

fn at(t: f64, p: [f64; 3]) -> Pose {
    Pose::new(t, p, [0.0, 0.0, 0.0, 1.0]).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn depth_hand_case() {
    let m = depth_metrics(&[row(&[1.0, 2.0, 4.0])], &[row(&[1.0, 2.0, 2.0])], true).unwrap();
    assert!(close(m.abs_rel, 1.0 / 3.0));
    assert!(close(m.delta_125, 2.0 / 3.0));
    assert!(close(m.log_rmse, 2f64.ln() / 3f64.sqrt()));
    assert_eq!((m.pixel_count, m.scale), (3, 1.0));
}

#[test]
fn depth_metrics_skip_pixels_invalid_on_either_side() {
    let mut pred = row(&[1.0, 2.0, 4.0, 9.0]);
    let mut gt = row(&[1.0, 2.0, 2.0, 1.0]);
    gt.set(3, 0, f64::NAN);
    assert!(!gt.is_valid(3, 0));
    let m = depth_metrics(&[pred.clone()], &[gt.clone()], true).unwrap();
    assert_eq!(m.pixel_count, 3);
    assert!(close(m.abs_rel, 1.0 / 3.0));
    pred.set(0, 0, 0.0);
    let m = depth_metrics(&[pred], &[gt], true).unwrap();
    assert_eq!(m.pixel_count, 2);
}

#[test]
fn median_alignment_uses_one_scale_over_all_frames() {
    // Ratios gt/pred are 2, 2, 2 and 4, 4: the pooled median is 2.
    let pred = [row(&[1.0, 2.0, 3.0]), row(&[1.0, 1.0])];
    let gt = [row(&[2.0, 4.0, 6.0]), row(&[4.0, 4.0])];
    let m = depth_metrics(&pred, &gt, false).unwrap();
    assert_eq!(m.scale, 2.0);
    assert!(close(m.abs_rel, 2.0 * 0.5 / 5.0));
    assert!(close(m.delta_125, 3.0 / 5.0));
}

#[test]
fn depth_metrics_reject_empty_overlap() {
    assert!(depth_metrics(
        &[DepthMap::invalid(2, 2).unwrap()],
        &[row(&[1.0, 1.0, 1.0, 1.0])],
        true
    )
    .is_err());
    assert!(depth_metrics(&[row(&[1.0])], &[row(&[1.0, 1.0])], true).is_err());
}

#[test]
fn triangle_ate_under_rigid_alignment() {
    let a = 0.3 / 3f64.sqrt();
    let (gt, est): (Vec<Pose>, Vec<Pose>) = (0..3)
        .map(|i| {
            let phi = FRAC_PI_2 + i as f64 * 2.0 * FRAC_PI_3;
            let (x, y) = (phi.cos(), phi.sin());
            (
                at(i as f64, [x, y, 0.0]),
                at(i as f64, [x * (1.0 + a), y * (1.0 - a), 0.0]),
            )
        })
        .unzip();
    let ate_rigid = ate(&est, &gt, false).unwrap();
    assert!((ate_rigid - 0.173205).abs() < 1e-6);
    assert!(close(ate_rigid, a));
}

#[test]
fn umeyama_never_returns_a_reflection() {
    // Mirror image of a generic point set: the best proper rotation is not
    // the mirror, and the result must still be a rotation.
    let src: Vec<Vector3<f64>> = [
        [1.0, 0.2, 0.1],
        [0.1, 2.0, -0.4],
        [-1.3, 0.3, 0.7],
        [0.4, -0.8, 1.5],
        [0.0, 0.0, -1.0],
    ]
    .iter()
    .map(|p| Vector3::from(*p))
    .collect();
    let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    let dst: Vec<_> = src.iter().map(|p| mirror * p).collect();
    for with_scale in [false, true] {
        let t = umeyama(&src, &dst, with_scale).unwrap();
        let r: Rotation3<f64> = t.rotation.to_rotation_matrix();
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(t.scale > 0.0);
    }
}

#[test]
fn umeyama_rejects_degenerate_sets() {
    let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    assert!(umeyama(&line, &line, true).is_err());
    assert!(umeyama(&line[..2], &line[..2], true).is_err());
}

#[test]
fn single_yaw_error_spreads_over_relative_motions() {
    let gt: Vec<Pose> = (0..4).map(|i| at(i as f64, [i as f64, 0.0, 0.0])).collect();
    // Turn the last camera in place: only the motion between poses 2 and 3
    // changes, and only in rotation.
    let mut est = gt.clone();
    est[3].rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 5f64.to_radians());
    let (rte, rre) = rpe(&est, &gt).unwrap();
    assert!(rte.abs() < 1e-12, "{rte}");
    assert!((rre - 5.0 / 3.0).abs() < 1e-12, "{rre}");
}

#[test]
fn association_is_greedy_by_time_gap() {
    let est = Trajectory::new(vec![
        at(0.0, [0.0; 3]),
        at(0.1, [0.0; 3]),
        at(0.2, [0.0; 3]),
    ])
    .unwrap();
    let gt = Trajectory::new(vec![
        at(0.005, [0.0; 3]),
        at(0.11, [0.0; 3]),
        at(0.5, [0.0; 3]),
    ])
    .unwrap();
    assert_eq!(
        associate_timestamps(&est, &gt, 0.02).unwrap(),
        vec![(0, 0), (1, 1)]
    );
    assert!(associate_timestamps(&est, &gt, 0.001).is_err());

    // Two estimates compete for one reference pose; the closer one wins.
    let est = Trajectory::new(vec![at(1.0, [0.0; 3]), at(1.004, [0.0; 3])]).unwrap();
    let gt = Trajectory::new(vec![at(1.003, [0.0; 3])]).unwrap();
    assert_eq!(associate_timestamps(&est, &gt, 0.02).unwrap(), vec![(1, 0)]);
}

#[test]
fn pose_metrics_of_an_identical_copy_are_zero() {
    let poses: Vec<Pose> = (0..6)
        .map(|i| {
            let t = i as f64;
            let q = UnitQuaternion::from_euler_angles(0.1 * t, -0.05 * t, 0.2);
            Pose::new(t * 0.1, [t.sin(), t.cos(), 0.3 * t], [q.i, q.j, q.k, q.w]).unwrap()
        })
        .collect();
    let gt = Trajectory::new(poses).unwrap();
    let m = pose_metrics(&gt, &gt, &PoseEvalOptions::default()).unwrap();
    assert_eq!(m.pairs, 6);
    assert!(m.ate < 1e-12 && m.rte < 1e-12 && m.rre < 1e-6);
}
