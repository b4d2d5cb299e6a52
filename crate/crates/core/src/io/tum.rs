//! TUM RGB-D trajectory text: `timestamp tx ty tz qx qy qz qw` per line,
//! `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Pose, Trajectory};

const NORM_WARN_TOLERANCE: f64 = 1e-6;

pub fn parse_tum(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("non-numeric field {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let quat = [fields[4], fields[5], fields[6], fields[7]];
        let norm = quat.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_WARN_TOLERANCE {
            log::warn!("line {line_no}: quaternion norm {norm} renormalized");
        }
        let pose = Pose::new(fields[0], [fields[1], fields[2], fields[3]], quat).map_err(|e| {
            Error::Parse {
                line: line_no,
                reason: e.to_string(),
            }
        })?;
        if let Some(prev) = poses.last().map(|p: &Pose| p.timestamp) {
            if !(pose.timestamp > prev) {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("timestamp {} does not follow {prev}", pose.timestamp),
                });
            }
        }
        poses.push(pose);
    }
    Trajectory::new(poses)
}

/// Shortest round-trip formatting, so parsing the output reproduces every value.
pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in traj.poses() {
        let t = p.translation;
        let [qx, qy, qz, qw] = p.quat_xyzw();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, qx, qy, qz, qw
        );
    }
    out
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
    parse_tum(&text).map_err(|e| e.at_path(path))
}

pub fn write_tum(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_tum(traj)).map_err(|e| Error::from(e).at_path(path))
}
