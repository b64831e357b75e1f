//! Scenes, trajectory execution scoring and the success-rate benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dualquat::{wrap_angle, DualQuaternion, Quaternion, Vec3};
use crate::error::{read_to_string, Error, Result};
use crate::feasibility::Aabb;
use crate::geometry::{in_collision, Obstacle, Shape};
use crate::hrl::Task;
use crate::kinematics::{fk, normalized_manipulability, JointVector, RobotModel, TaskSpace};
use crate::trajectory::joint_distance_inf;

/// z-score of a two-sided 95% interval.
pub const Z95: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub name: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy_deg: [f64; 3],
}

impl Station {
    pub fn pose(&self) -> DualQuaternion {
        let r = self.rpy_deg.map(f64::to_radians);
        DualQuaternion::from_rotation_translation(Quaternion::from_euler(r[0], r[1], r[2]), &Vec3::from(self.position))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workcell {
    pub name: String,
    /// Robot model name (`planar2r`, `desk3r`, `arm7`) or a path relative to the file.
    pub robot: String,
    pub workspace: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub stations: Vec<Station>,
}

fn shape_bounds(s: &Shape) -> ([f64; 3], [f64; 3]) {
    match *s {
        Shape::Box { min, max } => (min, max),
        Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
    }
}

impl Workcell {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let w: Workcell = toml::from_str(text).map_err(|e| Error::parse("workcell", e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("workcell serializes")
    }

    /// Obstacles must lie inside the workspace grown by half its largest extent;
    /// stations must lie inside the workspace.
    pub fn validate(&self) -> Result<()> {
        if !self.workspace.is_valid() {
            return Err(Error::Config("workcell workspace box is empty".into()));
        }
        let (lo, hi) = (self.workspace.min, self.workspace.max);
        let pad = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) * 0.5;
        for o in &self.obstacles {
            if !o.is_valid() {
                return Err(Error::Config(format!("obstacle {:?} is degenerate", o.id)));
            }
            let (a, b) = shape_bounds(&o.shape);
            if (0..3).any(|i| a[i] < lo[i] - pad || b[i] > hi[i] + pad) {
                return Err(Error::Config(format!("obstacle {:?} lies outside the enclosing bound", o.id)));
            }
        }
        for s in &self.stations {
            if !self.workspace.contains(&Vec3::from(s.position)) {
                return Err(Error::Config(format!("station {:?} lies outside the workspace", s.name)));
            }
        }
        Ok(())
    }

    pub fn station(&self, name: &str) -> Option<&Station> {
        self.stations.iter().find(|s| s.name == name)
    }

    /// Resolves `robot` against the built-in models, then as a path relative to `base`.
    pub fn robot_model(&self, base: Option<&Path>) -> Result<RobotModel> {
        if let Some(text) = crate::kinematics::models::by_name(&self.robot) {
            return RobotModel::from_toml_str(text);
        }
        let p = match base {
            Some(b) => b.join(&self.robot),
            None => self.robot.clone().into(),
        };
        RobotModel::load(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessCriteria {
    pub pos_tol: f64,
    /// Per Euler angle, radians.
    pub rot_tol: f64,
    /// Largest joint step (radians) tolerated while carrying a payload.
    pub hold_max_step: f64,
    /// Joint-space resolution of the swept collision check (radians).
    pub collision_step: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria {
            pos_tol: 0.05,
            rot_tol: 5f64.to_radians(),
            hold_max_step: 2f64.to_radians(),
            collision_step: 2f64.to_radians(),
        }
    }
}

impl SuccessCriteria {
    pub fn validate(&self) -> Result<()> {
        if [self.pos_tol, self.rot_tol, self.hold_max_step, self.collision_step]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config("success criteria must be positive".into()))
        }
    }
}

/// Position within `pos_tol` and each constrained Euler angle within `rot_tol`.
pub fn pose_hit(space: TaskSpace, pose: &DualQuaternion, target: &DualQuaternion, c: &SuccessCriteria) -> bool {
    let d = pose.translation() - target.translation();
    let dp = match space {
        TaskSpace::Spatial => d.norm(),
        _ => d.xy().norm(),
    };
    if dp > c.pos_tol {
        return false;
    }
    let (a, b) = (pose.euler(), target.euler());
    space
        .euler_mask()
        .iter()
        .enumerate()
        .all(|(i, m)| !m || wrap_angle(a[i] - b[i]).abs() <= c.rot_tol)
}

/// `Σ (man'(θ) − COL(θ))` over the waypoints.
pub fn switch_reward(model: &RobotModel, obstacles: &[Obstacle], traj: &[JointVector]) -> f64 {
    traj.iter()
        .map(|q| point_reward(normalized_manipulability(model, q), in_collision(model, q, obstacles, 0.0)))
        .sum()
}

/// Per-waypoint term `man' − COL`, with `man'` capped at the home value so a
/// colliding waypoint never scores above zero.
pub fn point_reward(man_prime: f64, col: bool) -> f64 {
    man_prime.clamp(0.0, 1.0) - f64::from(u8::from(col))
}

/// Colliding samples along the path, each edge subdivided into `2^k` equal
/// parts with `k` the smallest giving steps of at most `step`.
pub fn swept_collisions(model: &RobotModel, obstacles: &[Obstacle], traj: &[JointVector], step: f64) -> usize {
    let hit = |q: &[f64]| usize::from(in_collision(model, q, obstacles, 0.0));
    let mut count = traj.first().map_or(0, |q| hit(q));
    for w in traj.windows(2) {
        let d = joint_distance_inf(&w[0], &w[1]);
        let mut parts = 1usize;
        while d / parts as f64 > step && parts < 1 << 20 {
            parts *= 2;
        }
        for k in 1..=parts {
            let u = k as f64 / parts as f64;
            let q: JointVector = w[0].iter().zip(&w[1]).map(|(a, b)| a + (b - a) * u).collect();
            count += hit(&q);
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecReport {
    pub success: bool,
    /// Waypoint index attaining each critical configuration, in order.
    pub hits: Vec<Option<usize>>,
    /// First critical configuration not attained.
    pub missed: Option<usize>,
    pub collisions: usize,
    /// A joint step above the hold bound occurred while carrying a payload.
    pub dropped: bool,
    pub within_limits: bool,
    pub r_s: f64,
    pub max_step: f64,
}

impl ExecReport {
    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }
}

pub fn execute(traj: &[JointVector], model: &RobotModel, obstacles: &[Obstacle], criteria: &SuccessCriteria, task: &Task) -> ExecReport {
    let mut hits = vec![None; task.len()];
    let mut k = 0;
    for (i, q) in traj.iter().enumerate() {
        let Ok(pose) = fk(model, q) else { break };
        while k < task.len() && pose_hit(model.task_space, &pose, &task.poses[k], criteria) {
            hits[k] = Some(i);
            k += 1;
        }
        if k == task.len() {
            break;
        }
    }
    let missed = hits.iter().position(Option::is_none);
    let mut dropped = false;
    for c in 0..task.len() {
        let Some(a) = hits[c] else { break };
        if !task.hold[c] {
            continue;
        }
        let b = hits.get(c + 1).copied().flatten().unwrap_or(traj.len() - 1);
        if traj[a..=b].windows(2).any(|w| joint_distance_inf(&w[0], &w[1]) > criteria.hold_max_step + 1e-9) {
            dropped = true;
        }
    }
    let collisions = swept_collisions(model, obstacles, traj, criteria.collision_step);
    let within_limits = traj.iter().all(|q| model.within_limits(q));
    ExecReport {
        success: missed.is_none() && collisions == 0 && !dropped && within_limits,
        hits,
        missed,
        collisions,
        dropped,
        within_limits,
        r_s: switch_reward(model, obstacles, traj),
        max_step: crate::trajectory::max_joint_step(traj),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "HYBRID")]
    Hybrid,
    #[serde(rename = "LFD_ONLY")]
    LfdOnly,
    #[serde(rename = "DRL_ONLY")]
    DrlOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Hybrid, Variant::LfdOnly, Variant::DrlOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hybrid => "HYBRID",
            Variant::LfdOnly => "LFD_ONLY",
            Variant::DrlOnly => "DRL_ONLY",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "HYBRID" => Ok(Variant::Hybrid),
            "LFD_ONLY" | "LFD" => Ok(Variant::LfdOnly),
            "DRL_ONLY" | "DRL" => Ok(Variant::DrlOnly),
            _ => Err(Error::Config(format!("unknown planner variant {s:?}"))),
        }
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub trials: usize,
    /// Per-trial uniform perturbation of the critical configurations.
    pub jitter_pos: [f64; 3],
    pub jitter_rot_deg: [f64; 3],
    pub criteria: SuccessCriteria,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 100,
            jitter_pos: [0.01, 0.01, 0.0],
            jitter_rot_deg: [0.0, 0.0, 0.0],
            criteria: SuccessCriteria::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub task: String,
    pub trial: usize,
    pub success: bool,
    pub collisions: usize,
    pub r_s: f64,
    pub hits: usize,
    pub configs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub variant: String,
    /// Task id, or `*` for the aggregate.
    pub task: String,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<RateSummary>,
}

impl BenchResult {
    pub fn aggregate(&self, variant: Variant) -> Option<&RateSummary> {
        self.summary.iter().find(|s| s.variant == variant.as_str() && s.task == "*")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:<16} {:>6} {:>6} {:>7}  {}\n", "variant", "task", "trials", "succ", "rate", "wilson95");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{:<10} {:<16} {:>6} {:>6} {:>6.1}%  [{:.3}, {:.3}]",
                r.variant,
                r.task,
                r.trials,
                r.successes,
                100.0 * r.rate,
                r.lo,
                r.hi
            );
        }
        s
    }
}

/// Summaries per task and aggregated, grouped by variant.
pub fn summarize(rows: &[BenchRow]) -> Vec<RateSummary> {
    let mut groups: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for r in rows {
        for task in [r.task.clone(), "*".to_string()] {
            let g = groups.entry((r.variant.clone(), task)).or_default();
            g.0 += 1;
            g.1 += usize::from(r.success);
        }
    }
    groups
        .into_iter()
        .map(|((variant, task), (n, k))| {
            let (lo, hi) = wilson(k, n, Z95);
            RateSummary {
                variant,
                task,
                trials: n,
                successes: k,
                rate: k as f64 / n as f64,
                lo,
                hi,
            }
        })
        .collect()
}

/// Runs `trials` jittered executions of every task through `planner`.
/// Trial `t` of task `i` draws from its own stream seeded by `(seed, i, t)`;
/// a planner error counts as a failed trial.
pub fn bench<P>(variant: Variant, tasks: &[Task], model: &RobotModel, obstacles: &[Obstacle], cfg: &BenchConfig, seed: u64, planner: P) -> BenchResult
where
    P: Fn(&Task, &mut ChaCha8Rng) -> Result<Vec<JointVector>> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|i| (0..cfg.trials).map(move |t| (i, t))).collect();
    let rot = cfg.jitter_rot_deg.map(f64::to_radians);
    let rows: Vec<BenchRow> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((i as u64) << 32) | t as u64);
            let task = tasks[i].jittered(cfg.jitter_pos, rot, &mut rng);
            let (success, collisions, r_s, hits) = match planner(&task, &mut rng) {
                Ok(traj) if !traj.is_empty() => {
                    let rep = execute(&traj, model, obstacles, &cfg.criteria, &task);
                    (rep.success, rep.collisions, rep.r_s, rep.hit_count())
                }
                Ok(_) => (false, 0, 0.0, 0),
                Err(e) => {
                    log::debug!("{} trial {t} of {}: {e}", variant.as_str(), task.id);
                    (false, 0, 0.0, 0)
                }
            };
            BenchRow {
                variant: variant.as_str().to_string(),
                task: task.id.clone(),
                trial: t,
                success,
                collisions,
                r_s,
                hits,
                configs: task.len(),
            }
        })
        .collect();
    BenchResult {
        summary: summarize(&rows),
        rows,
    }
}
