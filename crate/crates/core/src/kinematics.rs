//! Serial-chain robot models: forward kinematics, Jacobian, manipulability
//! and damped least-squares inverse kinematics.
//!
//! Frame indices used by capsules: `0` is the base, `k` (1..=n) is the
//! frame of joint `k` after its fixed offset, `n + 1` is the tool.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dualquat::{wrap_angle, DualQuaternion, Quaternion, Vec3};
use crate::error::{Error, Result};

pub type JointVector = Vec<f64>;

/// Which end-effector components the Jacobian and IK constrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Position and orientation, `m = 6`.
    Spatial,
    /// `x`, `y` and yaw, `m = 3`.
    Planar,
    /// `x`, `y` only, `m = 2`.
    PlanarPosition,
}

impl TaskSpace {
    pub fn dim(self) -> usize {
        match self {
            TaskSpace::Spatial => 6,
            TaskSpace::Planar => 3,
            TaskSpace::PlanarPosition => 2,
        }
    }

    /// Rotation error restricted to the constrained components.
    pub fn rotation_error(self, current: &Quaternion, target: &Quaternion) -> f64 {
        match self {
            TaskSpace::Spatial => (current.conjugate() * *target).angle(),
            TaskSpace::Planar => rotation_error_vector(current, target).z.abs(),
            TaskSpace::PlanarPosition => 0.0,
        }
    }

    /// Per-axis Euler-angle mask used for tolerance checks (roll, pitch, yaw).
    pub fn euler_mask(self) -> [bool; 3] {
        match self {
            TaskSpace::Spatial => [true; 3],
            TaskSpace::Planar => [false, false, true],
            TaskSpace::PlanarPosition => [false; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Vec3,
    pub offset: DualQuaternion,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapsuleSpec {
    pub frame_a: usize,
    pub frame_b: usize,
    pub radius: f64,
}

impl CapsuleSpec {
    pub fn adjacent(&self, o: &CapsuleSpec) -> bool {
        self.frame_a == o.frame_a
            || self.frame_a == o.frame_b
            || self.frame_b == o.frame_a
            || self.frame_b == o.frame_b
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    axis: [f64; 3],
    offset_pose: [f64; 8],
    limits_deg: [f64; 2],
}

/// On-disk model description (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    dof: usize,
    #[serde(default = "default_task_space")]
    task_space: TaskSpace,
    #[serde(default)]
    tool_pose: Option<[f64; 8]>,
    #[serde(default)]
    approach_axis: Option<[f64; 3]>,
    home_config_deg: Vec<f64>,
    joints: Vec<JointFile>,
    #[serde(default)]
    capsules: Vec<CapsuleSpec>,
}

fn default_task_space() -> TaskSpace {
    TaskSpace::Spatial
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub capsules: Vec<CapsuleSpec>,
    pub home: JointVector,
    pub tool: DualQuaternion,
    pub task_space: TaskSpace,
    /// Tool-frame approach direction (used by the ray pattern).
    pub approach_axis: Vec3,
    home_manip: f64,
    hash: String,
}

impl RobotModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::parse("robot model", e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&crate::error::read_to_string(path)?)
    }

    fn from_file(file: ModelFile) -> Result<Self> {
        if file.dof == 0 || file.joints.len() != file.dof {
            return Err(Error::InvalidModel(format!(
                "dof {} but {} joints",
                file.dof,
                file.joints.len()
            )));
        }
        if file.home_config_deg.len() != file.dof {
            return Err(Error::InvalidModel(format!(
                "home_config_deg has {} entries, expected {}",
                file.home_config_deg.len(),
                file.dof
            )));
        }
        let mut joints = Vec::with_capacity(file.dof);
        for (i, j) in file.joints.iter().enumerate() {
            let axis = Vec3::from(j.axis);
            if ((axis.norm() - 1.0).abs()) > 1e-6 {
                return Err(Error::InvalidModel(format!("joint {i} axis is not unit-norm")));
            }
            let [lo, hi] = j.limits_deg;
            if !(lo < hi) {
                return Err(Error::InvalidModel(format!("joint {i} limits: lo must be < hi")));
            }
            let offset = DualQuaternion::from_array(j.offset_pose);
            if offset.unit_error() > 1e-6 {
                return Err(Error::InvalidModel(format!("joint {i} offset_pose is not a unit dual quaternion")));
            }
            joints.push(Joint {
                axis: axis.normalize(),
                offset,
                lo: lo.to_radians(),
                hi: hi.to_radians(),
            });
        }
        let tool = file.tool_pose.map(DualQuaternion::from_array).unwrap_or_default();
        if tool.unit_error() > 1e-6 {
            return Err(Error::InvalidModel("tool_pose is not a unit dual quaternion".into()));
        }
        for (i, c) in file.capsules.iter().enumerate() {
            if c.frame_a > file.dof + 1 || c.frame_b > file.dof + 1 || !(c.radius > 0.0) {
                return Err(Error::InvalidModel(format!("capsule {i} is malformed")));
            }
        }
        let approach_axis = file.approach_axis.map(Vec3::from).unwrap_or_else(Vec3::z);
        if !(approach_axis.norm() > 1e-9) {
            return Err(Error::InvalidModel("approach_axis is zero".into()));
        }
        let home: JointVector = file.home_config_deg.iter().map(|d| d.to_radians()).collect();

        let canonical = serde_json::to_vec(&file)?;
        let hash = hex::encode(Sha256::digest(&canonical));

        let mut model = RobotModel {
            name: file.name,
            joints,
            capsules: file.capsules,
            home,
            tool,
            task_space: file.task_space,
            approach_axis: approach_axis.normalize(),
            home_manip: 0.0,
            hash,
        };
        if !model.within_limits(&model.home) {
            return Err(Error::InvalidModel("home configuration outside joint limits".into()));
        }
        if !fk(&model, &model.home)?.is_finite() {
            return Err(Error::InvalidModel("FK at home is not finite".into()));
        }
        let m = manipulability(&model, &model.home);
        if !(m > 1e-12) {
            return Err(Error::SingularHome);
        }
        model.home_manip = m;
        Ok(model)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn home_manipulability(&self) -> f64 {
        self.home_manip
    }

    /// SHA-256 of the canonical model content.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn within_limits(&self, theta: &[f64]) -> bool {
        theta.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(theta)
                .all(|(j, &t)| t >= j.lo && t <= j.hi)
    }

    pub fn clamp(&self, theta: &mut [f64]) -> bool {
        let mut clamped = false;
        for (j, t) in self.joints.iter().zip(theta.iter_mut()) {
            let c = t.clamp(j.lo, j.hi);
            if c != *t {
                clamped = true;
                *t = c;
            }
        }
        clamped
    }

    pub fn random_config<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        self.joints.iter().map(|j| rng.random_range(j.lo..=j.hi)).collect()
    }

    /// Largest reach from the base, bounded by summed link offsets.
    pub fn reach_bound(&self) -> f64 {
        self.joints.iter().map(|j| j.offset.translation().norm()).sum::<f64>()
            + self.tool.translation().norm()
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dof() {
            return Err(Error::Dimension {
                expected: self.dof(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// World poses of every frame: base, each joint (after rotation), tool.
pub fn frames(model: &RobotModel, theta: &[f64]) -> Result<Vec<DualQuaternion>> {
    model.check_dim(theta)?;
    Ok(frames_unchecked(model, theta))
}

fn frames_unchecked(model: &RobotModel, theta: &[f64]) -> Vec<DualQuaternion> {
    let mut out = Vec::with_capacity(model.dof() + 2);
    let mut t = DualQuaternion::IDENTITY;
    out.push(t);
    for (j, &a) in model.joints.iter().zip(theta) {
        let rot = DualQuaternion::from_rotation(Quaternion::about_unit_axis(&j.axis, a));
        t = t.mul_raw(&j.offset).mul_raw(&rot);
        out.push(t);
    }
    out.push(t.mul_raw(&model.tool));
    out
}

pub fn fk(model: &RobotModel, theta: &[f64]) -> Result<DualQuaternion> {
    model.check_dim(theta)?;
    Ok(*frames_unchecked(model, theta).last().expect("tool frame"))
}

/// Frame positions only, indexed like [`frames`].
pub fn frame_positions(model: &RobotModel, theta: &[f64]) -> Vec<Vec3> {
    frames_unchecked(model, theta)
        .iter()
        .map(|f| f.translation())
        .collect()
}

/// World-frame rotation vector taking `current` to `target`.
pub fn rotation_error_vector(current: &Quaternion, target: &Quaternion) -> Vec3 {
    (*target * current.conjugate()).log_vector()
}

fn select_rows(ts: TaskSpace, lin: &Vec3, ang: &Vec3) -> Vec<f64> {
    match ts {
        TaskSpace::Spatial => vec![lin.x, lin.y, lin.z, ang.x, ang.y, ang.z],
        TaskSpace::Planar => vec![lin.x, lin.y, ang.z],
        TaskSpace::PlanarPosition => vec![lin.x, lin.y],
    }
}

/// Geometric Jacobian restricted to the model's task space (`m × n`).
pub fn jacobian(model: &RobotModel, theta: &[f64]) -> DMatrix<f64> {
    let f = frames_unchecked(model, theta);
    let n = model.dof();
    let m = model.task_space.dim();
    let pe = f[n + 1].translation();
    let mut jac = DMatrix::zeros(m, n);
    for k in 0..n {
        let fr = &f[k + 1];
        let z = fr.real.rotate(&model.joints[k].axis);
        let lin = z.cross(&(pe - fr.translation()));
        for (r, v) in select_rows(model.task_space, &lin, &z).into_iter().enumerate() {
            jac[(r, k)] = v;
        }
    }
    jac
}

/// `√det(J Jᵀ)`, clamped at zero.
pub fn manipulability(model: &RobotModel, theta: &[f64]) -> f64 {
    let j = jacobian(model, theta);
    let det = (&j * j.transpose()).determinant();
    det.max(0.0).sqrt()
}

pub fn normalized_manipulability(model: &RobotModel, theta: &[f64]) -> f64 {
    manipulability(model, theta) / model.home_manip
}

/// Task-space pose error (target minus current) as an `m`-vector.
pub fn pose_error(model: &RobotModel, current: &DualQuaternion, target: &DualQuaternion) -> DVector<f64> {
    let dp = target.translation() - current.translation();
    let dr = match model.task_space {
        TaskSpace::Planar => {
            let yaw = wrap_angle(target.euler()[2] - current.euler()[2]);
            Vec3::new(0.0, 0.0, yaw)
        }
        _ => rotation_error_vector(&current.real, &target.real),
    };
    DVector::from_vec(select_rows(model.task_space, &dp, &dr))
}

/// True when `pose` matches `target` within tolerance on constrained components.
pub fn within_tolerance(model: &RobotModel, pose: &DualQuaternion, target: &DualQuaternion, tol_pos: f64, tol_rot: f64) -> bool {
    let dp = match model.task_space {
        TaskSpace::Spatial => (pose.translation() - target.translation()).norm(),
        _ => (pose.translation() - target.translation()).xy().norm(),
    };
    dp <= tol_pos && model.task_space.rotation_error(&pose.real, &target.real) <= tol_rot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub damping: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            tol_pos: 1e-4,
            tol_rot: 1e-4,
            max_iters: 150,
            restarts: 20,
            damping: 0.05,
        }
    }
}

const MAX_JOINT_STEP: f64 = 0.5;

/// One damped least-squares descent from `start`.
pub fn ik_descend(model: &RobotModel, target: &DualQuaternion, start: &[f64], p: &IkParams) -> Option<JointVector> {
    match ik_track(model, target, start, p) {
        (theta, true) => Some(theta),
        _ => None,
    }
}

/// Damped least-squares descent that always returns its last iterate, with
/// a flag telling whether it converged.
pub fn ik_track(model: &RobotModel, target: &DualQuaternion, start: &[f64], p: &IkParams) -> (JointVector, bool) {
    let mut theta = start.to_vec();
    model.clamp(&mut theta);
    let m = model.task_space.dim();
    let lam2 = p.damping * p.damping;
    for _ in 0..=p.max_iters {
        let pose = *frames_unchecked(model, &theta).last().expect("tool frame");
        if within_tolerance(model, &pose, target, p.tol_pos, p.tol_rot) {
            return (theta, true);
        }
        let e = pose_error(model, &pose, target);
        let j = jacobian(model, &theta);
        let a = &j * j.transpose() + DMatrix::identity(m, m) * lam2;
        let Some(y) = a.lu().solve(&e) else { return (theta, false) };
        let mut step = j.transpose() * y;
        let norm = step.amax();
        if norm > MAX_JOINT_STEP {
            step *= MAX_JOINT_STEP / norm;
        }
        let prev = theta.clone();
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t += s;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return (prev, false);
        }
        model.clamp(&mut theta);
    }
    (theta, false)
}

/// IK from `seed`, then random restarts within the limits.
pub fn ik<R: Rng + ?Sized>(
    model: &RobotModel,
    target: &DualQuaternion,
    seed: &[f64],
    p: &IkParams,
    rng: &mut R,
) -> Option<JointVector> {
    if let Some(t) = ik_descend(model, target, seed, p) {
        return Some(t);
    }
    for _ in 0..p.restarts {
        let s = model.random_config(rng);
        if let Some(t) = ik_descend(model, target, &s, p) {
            return Some(t);
        }
    }
    None
}

/// Reference models shipped with the crate.
pub mod models {
    use super::RobotModel;

    pub const PLANAR_2R: &str = include_str!("../assets/robots/planar2r.toml");
    pub const DESK_3R: &str = include_str!("../assets/robots/desk3r.toml");
    pub const ARM_7DOF: &str = include_str!("../assets/robots/arm7.toml");

    pub fn planar_2r() -> RobotModel {
        RobotModel::from_toml_str(PLANAR_2R).expect("bundled model")
    }

    pub fn desk_3r() -> RobotModel {
        RobotModel::from_toml_str(DESK_3R).expect("bundled model")
    }

    pub fn arm_7dof() -> RobotModel {
        RobotModel::from_toml_str(ARM_7DOF).expect("bundled model")
    }

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "planar2r" => Some(PLANAR_2R),
            "desk3r" => Some(DESK_3R),
            "arm7" => Some(ARM_7DOF),
            _ => None,
        }
    }
}
