//! Task-space and joint-space trajectories and their text formats.

use std::path::Path;

use crate::dualquat::{format_pose_lines, parse_pose_lines, DualQuaternion};
use crate::error::{read_to_string, write_bytes, Error, Result};
use crate::kinematics::JointVector;

pub type TaskTrajectory = Vec<DualQuaternion>;
pub type JointTrajectory = Vec<JointVector>;

pub fn load_task_trajectory(path: &Path) -> Result<TaskTrajectory> {
    parse_pose_lines(&read_to_string(path)?)
}

pub fn save_task_trajectory(path: &Path, poses: &[DualQuaternion]) -> Result<()> {
    write_bytes(path, format_pose_lines(poses).as_bytes())
}

/// One joint vector (radians) per line.
pub fn format_joint_lines(traj: &[JointVector]) -> String {
    let mut out = String::new();
    for q in traj {
        let row: Vec<String> = q.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_joint_lines(text: &str) -> Result<JointTrajectory> {
    let mut out: JointTrajectory = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse("joint trajectory", format!("line {}: {e}", ln + 1)))?;
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::Dimension {
                    expected: first.len(),
                    got: row.len(),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn save_joint_trajectory(path: &Path, traj: &[JointVector]) -> Result<()> {
    write_bytes(path, format_joint_lines(traj).as_bytes())
}

pub fn load_joint_trajectory(path: &Path) -> Result<JointTrajectory> {
    parse_joint_lines(&read_to_string(path)?)
}

/// Largest per-joint change between consecutive waypoints (radians).
pub fn max_joint_step(traj: &[JointVector]) -> f64 {
    traj.windows(2)
        .map(|w| joint_distance_inf(&w[0], &w[1]))
        .fold(0.0, f64::max)
}

pub fn joint_distance_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Linear joint interpolation from `a` to `b` (both excluded) with steps of at most `max_step`.
pub fn joint_blend(a: &[f64], b: &[f64], max_step: f64) -> JointTrajectory {
    let d = joint_distance_inf(a, b);
    let n = (d / max_step).ceil() as usize;
    (1..n)
        .map(|k| {
            let u = k as f64 / n as f64;
            a.iter().zip(b).map(|(x, y)| x + (y - x) * u).collect()
        })
        .collect()
}

/// Inserts linear joint interpolation so no step exceeds `max_step`.
pub fn densify(traj: &[JointVector], max_step: f64) -> JointTrajectory {
    let mut out = Vec::with_capacity(traj.len());
    for (i, q) in traj.iter().enumerate() {
        if i > 0 {
            out.extend(joint_blend(&traj[i - 1], q, max_step));
        }
        out.push(q.clone());
    }
    out
}
