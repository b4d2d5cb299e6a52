//! Benchmark metrics: video depth with per-sequence median scale alignment,
//! and camera pose errors (ATE after Umeyama alignment, RTE, RRE).

mod depth;
mod pose;

pub use depth::{align_depth_scale, depth_metrics, median, DepthMetrics};
pub use pose::{
    associate_timestamps, ate, matched_poses, pose_metrics, rpe, rpe_with, umeyama, umeyama_align,
    Pose, PoseEvalOptions, PoseMetrics, Reduction, Sim3, Trajectory,
};
