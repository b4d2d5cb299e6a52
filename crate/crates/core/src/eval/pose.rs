use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

/// A timestamped camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// `quat` is `[qx, qy, qz, qw]` and is normalized. Quaternions already
    /// unit to within a few ulps are kept bit-for-bit.
    pub fn new(timestamp: f64, translation: [f64; 3], quat: [f64; 4]) -> Result<Self> {
        let [qx, qy, qz, qw] = quat;
        let q = Quaternion::new(qw, qx, qy, qz);
        let n = q.norm();
        if !(n > 0.0 && n.is_finite())
            || !timestamp.is_finite()
            || translation.iter().any(|t| !t.is_finite())
        {
            return Err(Error::InvalidData(format!(
                "pose at t={timestamp} has a degenerate quaternion or non-finite values"
            )));
        }
        Ok(Self {
            timestamp,
            rotation: if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
            translation: Vector3::from(translation),
        })
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// `[qx, qy, qz, qw]`.
    pub fn quat_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }
}

/// Poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if let Some(w) = poses
            .windows(2)
            .find(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::InvalidData(format!(
                "timestamps must strictly increase: {} then {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn transformed(&self, t: &Sim3) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| t.apply_pose(p)).collect(),
        }
    }
}

/// Similarity transform `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            timestamp: pose.timestamp,
            rotation: self.rotation * pose.rotation,
            translation: self.apply_point(&pose.translation),
        }
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Closed-form least-squares similarity (or rigid, without scale) transform
/// mapping `src` onto `dst`, with the reflection correction that keeps
/// `det R = +1`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Sim3> {
    if src.len() != dst.len() {
        return Err(Error::Alignment(format!(
            "{} source vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Alignment(format!(
            "need at least 3 point pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let (mu_s, mu_d) = (centroid(src), centroid(dst));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::Alignment(
            "point configuration is collinear or degenerate".into(),
        ));
    }
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s_diag[sv.imin()] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = if with_scale {
        sv.dot(&s_diag) / var_s
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Sim3 {
        rotation,
        translation,
        scale,
    })
}

fn positions(poses: &[Pose]) -> Vec<Vector3<f64>> {
    poses.iter().map(|p| p.translation).collect()
}

fn check_paired(est: &[Pose], gt: &[Pose]) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} estimated vs {} reference poses",
            est.len(),
            gt.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::EmptyInput("no poses to evaluate".into()));
    }
    Ok(())
}

/// Alignment of index-paired estimated positions onto the reference.
pub fn umeyama_align(est: &[Pose], gt: &[Pose], with_scale: bool) -> Result<Sim3> {
    check_paired(est, gt)?;
    umeyama(&positions(est), &positions(gt), with_scale)
}

/// RMSE of position residuals after aligning `est` onto `gt` (index-paired).
/// When every estimated position coincides the alignment is a pure
/// translation, since rotation and scale are unobservable.
pub fn ate(est: &[Pose], gt: &[Pose], with_scale: bool) -> Result<f64> {
    check_paired(est, gt)?;
    let (src, dst) = (positions(est), positions(gt));
    let mu = centroid(&src);
    let spread = src
        .iter()
        .map(|p| (p - mu).norm_squared())
        .fold(0.0, f64::max);
    let align = if spread <= 1e-24 {
        Sim3 {
            translation: centroid(&dst) - mu,
            ..Sim3::identity()
        }
    } else {
        umeyama(&src, &dst, with_scale)?
    };
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (align.apply_point(s) - d).norm_squared())
        .sum();
    Ok((sq / src.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Rmse,
}

impl Reduction {
    fn reduce(self, values: &[f64]) -> f64 {
        let n = values.len() as f64;
        match self {
            Reduction::Mean => values.iter().sum::<f64>() / n,
            Reduction::Rmse => (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        }
    }
}

/// Relative translation (meters) and rotation (degrees) errors over
/// consecutive index-paired poses, RTE as RMSE and RRE as mean.
pub fn rpe(est: &[Pose], gt: &[Pose]) -> Result<(f64, f64)> {
    rpe_with(est, gt, Reduction::Rmse, Reduction::Mean)
}

pub fn rpe_with(est: &[Pose], gt: &[Pose], rte: Reduction, rre: Reduction) -> Result<(f64, f64)> {
    check_paired(est, gt)?;
    if est.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: est.len(),
        });
    }
    let mut trans = Vec::with_capacity(est.len() - 1);
    let mut rot = Vec::with_capacity(est.len() - 1);
    for k in 0..est.len() - 1 {
        let rel_est = est[k].isometry().inverse() * est[k + 1].isometry();
        let rel_gt = gt[k].isometry().inverse() * gt[k + 1].isometry();
        let e = rel_est.inverse() * rel_gt;
        trans.push(e.translation.vector.norm());
        let q = e.rotation.quaternion();
        rot.push((2.0 * q.imag().norm().atan2(q.w.abs())).to_degrees());
    }
    Ok((rte.reduce(&trans), rre.reduce(&rot)))
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing `|dt|` (ties by index), each pose at most
/// once. Returned sorted by estimate index.
pub fn associate_timestamps(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(usize, usize)>> {
    if est.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput(
            "cannot associate an empty trajectory".into(),
        ));
    }
    let gt_t: Vec<f64> = gt.poses().iter().map(|p| p.timestamp).collect();
    let mut candidates = Vec::new();
    for (i, p) in est.poses().iter().enumerate() {
        let start = gt_t.partition_point(|&t| t < p.timestamp - max_dt);
        for (j, &t) in gt_t.iter().enumerate().skip(start) {
            let dt = (t - p.timestamp).abs();
            if t > p.timestamp + max_dt {
                break;
            }
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_est = vec![false; est.len()];
    let mut used_gt = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_est[i] && !used_gt[j] {
            used_est[i] = true;
            used_gt[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Association);
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Associated poses as two index-paired lists.
pub fn matched_poses(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
) -> Result<(Vec<Pose>, Vec<Pose>)> {
    let pairs = associate_timestamps(est, gt, max_dt)?;
    Ok(pairs
        .iter()
        .map(|&(i, j)| (est.poses()[i], gt.poses()[j]))
        .unzip())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseEvalOptions {
    pub with_scale: bool,
    pub max_dt: f64,
    pub rte: Reduction,
    pub rre: Reduction,
}

impl Default for PoseEvalOptions {
    fn default() -> Self {
        Self {
            with_scale: true,
            max_dt: 0.02,
            rte: Reduction::Rmse,
            rre: Reduction::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseMetrics {
    pub ate: f64,
    pub rte: f64,
    pub rre: f64,
    pub pairs: usize,
}

impl PoseMetrics {
    pub fn csv_header() -> &'static str {
        "ate,rte,rre"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.ate, self.rte, self.rre)
    }
}

pub fn pose_metrics(
    est: &Trajectory,
    gt: &Trajectory,
    opts: &PoseEvalOptions,
) -> Result<PoseMetrics> {
    let (e, g) = matched_poses(est, gt, opts.max_dt)?;
    let ate = ate(&e, &g, opts.with_scale)?;
    let (rte, rre) = rpe_with(&e, &g, opts.rte, opts.rre)?;
    Ok(PoseMetrics {
        ate,
        rte,
        rre,
        pairs: e.len(),
    })
}
