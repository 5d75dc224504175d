//! TUM trajectory text format: one `timestamp tx ty tz qx qy qz qw` line
//! per pose, quaternion in (x, y, z, w) order, six decimal places.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use egoflow_core::eval::Trajectory;
use egoflow_core::geometry::Pose;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed trajectory line: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: timestamps not strictly increasing at line {line}")]
    Order { path: String, line: usize },
}

pub fn format_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (ts, pose) in trajectory.iter() {
        let q = pose.rotation_quaternion();
        let t = pose.translation;
        // (x, y, z, w) order per the benchmark convention.
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            ts, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .expect("string write");
    }
    out
}

pub fn save_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), TrajError> {
    fs::write(path, format_trajectory(trajectory)).map_err(|e| TrajError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Parse trajectory text. `#` comment lines and blank lines are skipped;
/// quaternions are normalized on load.
pub fn parse_trajectory(content: &str, path: &str) -> Result<Trajectory, TrajError> {
    let mut trajectory = Trajectory::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(TrajError::Parse {
                path: path.to_string(),
                line: i + 1,
                reason: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut values = [0f64; 8];
        for (v, f) in values.iter_mut().zip(fields.iter()) {
            *v = f.parse().map_err(|e| TrajError::Parse {
                path: path.to_string(),
                line: i + 1,
                reason: format!("bad number {f:?}: {e}"),
            })?;
        }
        let quat = Quaternion::new(values[7], values[4], values[5], values[6]);
        if quat.norm() == 0.0 {
            return Err(TrajError::Parse {
                path: path.to_string(),
                line: i + 1,
                reason: "zero quaternion".to_string(),
            });
        }
        let rotation = UnitQuaternion::from_quaternion(quat);
        let pose = Pose::from_quaternion(&rotation, Vector3::new(values[1], values[2], values[3]));
        trajectory
            .push(values[0], pose)
            .map_err(|_| TrajError::Order {
                path: path.to_string(),
                line: i + 1,
            })?;
    }
    Ok(trajectory)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, TrajError> {
    let content = fs::read_to_string(path).map_err(|e| TrajError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_trajectory(&content, &path.display().to_string())
}
