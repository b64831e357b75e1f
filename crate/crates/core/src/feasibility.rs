//! Tessellated feasibility map over position voxels × orientation cells,
//! and segmentation of task-space trajectories into feasible / infeasible runs.

use std::io::{Cursor, Read};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dualquat::{DualQuaternion, Quaternion, Vec3};
use crate::error::{Error, Result};
use crate::geometry::{in_collision, Obstacle};
use crate::kinematics::{fk, ik_descend, normalized_manipulability, IkParams, JointVector, RobotModel};

pub const MAP_MAGIC: &[u8; 8] = b"HPFMAP\0\0";
pub const MAP_VERSION: u32 = 1;
/// Fixed-point scale of stored normalized manipulability.
pub const MAN_SCALE: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    Ok = 0,
    Unreachable = 1,
    Collision = 2,
    LowManip = 3,
}

impl Reason {
    fn from_bits(b: u8) -> Reason {
        match b & 3 {
            0 => Reason::Ok,
            1 => Reason::Unreachable,
            2 => Reason::Collision,
            _ => Reason::LowManip,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "OK",
            Reason::Unreachable => "UNREACHABLE",
            Reason::Collision => "COLLISION",
            Reason::LowManip => "LOW_MANIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaResult {
    pub feasible: bool,
    pub man_prime: f64,
    pub reason: Reason,
    pub witness: Option<JointVector>,
}

impl FeaResult {
    fn unreachable() -> Self {
        FeaResult {
            feasible: false,
            man_prime: 0.0,
            reason: Reason::Unreachable,
            witness: None,
        }
    }
}

/// True when `theta` passes the collision and manipulability criteria.
pub fn witness_passes(model: &RobotModel, theta: &[f64], obstacles: &[Obstacle], eps_m: f64) -> bool {
    model.within_limits(theta)
        && !in_collision(model, theta, obstacles, 0.0)
        && normalized_manipulability(model, theta) >= eps_m
}

/// Existential feasibility of a pose: any IK witness that is collision-free
/// and well-conditioned makes it feasible. Otherwise the reported reason is
/// the furthest criterion any witness reached.
pub fn fea<R: rand::Rng + ?Sized>(
    pose: &DualQuaternion,
    model: &RobotModel,
    obstacles: &[Obstacle],
    eps_m: f64,
    ik: &IkParams,
    rng: &mut R,
) -> FeaResult {
    if pose.translation().norm() > model.reach_bound() + ik.tol_pos {
        return FeaResult::unreachable();
    }
    let mut best: Option<(Reason, f64, JointVector)> = None;
    for attempt in 0..=ik.restarts {
        let start = if attempt == 0 { model.home.clone() } else { model.random_config(rng) };
        let Some(theta) = ik_descend(model, pose, &start, ik) else { continue };
        let mp = normalized_manipulability(model, &theta);
        let collides = in_collision(model, &theta, obstacles, 0.0);
        if !collides && mp >= eps_m {
            return FeaResult {
                feasible: true,
                man_prime: mp,
                reason: Reason::Ok,
                witness: Some(theta),
            };
        }
        let reason = if collides { Reason::Collision } else { Reason::LowManip };
        let better = match &best {
            None => true,
            Some((r, m, _)) => (*r == Reason::Collision && reason == Reason::LowManip) || (*r == reason && mp > *m),
        };
        if better {
            best = Some((reason, mp, theta));
        }
    }
    match best {
        None => FeaResult::unreachable(),
        Some((reason, mp, theta)) => FeaResult {
            feasible: false,
            man_prime: mp,
            reason,
            witness: Some(theta),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i]) && (0..3).any(|i| self.min[i] < self.max[i])
    }
}

/// Euler-angle discretization around a nominal orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationSpec {
    /// Half-range per axis in radians; an axis with 0 is not discretized.
    pub half_range: [f64; 3],
    pub cells: [u32; 3],
    /// Nominal orientation (roll, pitch, yaw) the cells are centered on.
    #[serde(default)]
    pub base_rpy: [f64; 3],
}

impl OrientationSpec {
    pub fn none() -> Self {
        OrientationSpec {
            half_range: [0.0; 3],
            cells: [1; 3],
            base_rpy: [0.0; 3],
        }
    }

    /// `cells_per_axis` cells over `[−θ_max, θ_max]` on all three axes.
    pub fn uniform(theta_max: f64, cells_per_axis: u32) -> Self {
        OrientationSpec {
            half_range: [theta_max; 3],
            cells: [cells_per_axis; 3],
            base_rpy: [0.0; 3],
        }
    }

    fn effective_cells(&self) -> [usize; 3] {
        let mut out = [1; 3];
        for i in 0..3 {
            if self.half_range[i] > 0.0 {
                out[i] = self.cells[i].max(1) as usize;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub workspace: Aabb,
    pub voxel: f64,
    pub orientation: OrientationSpec,
    pub eps_m: f64,
    pub ik: IkParams,
    pub seed: u64,
    /// Obstacles are grown by this much while labelling cells, so a feasible
    /// cell stays collision-free away from its center.
    #[serde(default)]
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapMeta {
    pub robot_hash: [u8; 32],
    pub obstacle_hash: [u8; 32],
    pub dof: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMap {
    pub spec: MapSpec,
    pub meta: MapMeta,
    dims: [usize; 6],
    reasons: Vec<Reason>,
    man_q: Vec<u16>,
    witnesses: Vec<Option<JointVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInfo {
    pub index: usize,
    pub feasible: bool,
    pub man_prime: f64,
    pub reason: Reason,
}

pub fn obstacle_hash(obstacles: &[Obstacle]) -> [u8; 32] {
    let bytes = serde_json::to_vec(obstacles).expect("obstacles serialize");
    Sha256::digest(&bytes).into()
}

fn quantize_man(m: f64) -> u16 {
    (m * MAN_SCALE).round().clamp(0.0, u16::MAX as f64) as u16
}

fn axis_cells(lo: f64, hi: f64, voxel: f64) -> usize {
    (((hi - lo) / voxel) - 1e-9).ceil().max(1.0) as usize
}

impl FeasibilityMap {
    pub fn dims(&self) -> [usize; 6] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.reasons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reasons.is_empty()
    }

    fn flat(&self, v: [usize; 3], o: [usize; 3]) -> usize {
        let d = self.dims;
        ((((v[0] * d[1] + v[1]) * d[2] + v[2]) * d[3] + o[0]) * d[4] + o[1]) * d[5] + o[2]
    }

    fn unflat(dims: &[usize; 6], mut idx: usize) -> ([usize; 3], [usize; 3]) {
        let mut out = [0usize; 6];
        for k in (0..6).rev() {
            out[k] = idx % dims[k];
            idx /= dims[k];
        }
        ([out[0], out[1], out[2]], [out[3], out[4], out[5]])
    }

    fn center_from(spec: &MapSpec, dims: &[usize; 6], v: [usize; 3], o: [usize; 3]) -> DualQuaternion {
        let ws = &spec.workspace;
        let mut p = Vec3::zeros();
        for i in 0..3 {
            p[i] = if ws.max[i] > ws.min[i] {
                ws.min[i] + (v[i] as f64 + 0.5) * spec.voxel
            } else {
                ws.min[i]
            };
        }
        let mut rpy = [0.0; 3];
        for i in 0..3 {
            let h = spec.orientation.half_range[i];
            let n = dims[3 + i];
            if h > 0.0 {
                rpy[i] = -h + (o[i] as f64 + 0.5) * (2.0 * h / n as f64);
            }
        }
        let b = spec.orientation.base_rpy;
        let q = Quaternion::from_euler(b[0], b[1], b[2]) * Quaternion::from_euler(rpy[0], rpy[1], rpy[2]);
        DualQuaternion::from_rotation_translation(q, &p)
    }

    /// Center pose of a cell.
    pub fn cell_center(&self, index: usize) -> DualQuaternion {
        let (v, o) = Self::unflat(&self.dims, index);
        Self::center_from(&self.spec, &self.dims, v, o)
    }

    /// Cell containing `pose`, or `None` when outside the tessellated region.
    pub fn cell_of(&self, pose: &DualQuaternion) -> Option<usize> {
        let p = pose.translation();
        let ws = &self.spec.workspace;
        if !ws.contains(&p) {
            return None;
        }
        let mut v = [0usize; 3];
        for i in 0..3 {
            if ws.max[i] > ws.min[i] {
                let k = ((p[i] - ws.min[i]) / self.spec.voxel).floor() as isize;
                v[i] = k.clamp(0, self.dims[i] as isize - 1) as usize;
            }
        }
        let b = self.spec.orientation.base_rpy;
        let rel = Quaternion::from_euler(b[0], b[1], b[2]).conjugate() * pose.real;
        let rpy = rel.to_euler();
        let mut o = [0usize; 3];
        for i in 0..3 {
            let h = self.spec.orientation.half_range[i];
            if h > 0.0 {
                if rpy[i].abs() > h + 1e-12 {
                    return None;
                }
                let n = self.dims[3 + i];
                let k = ((rpy[i] + h) / (2.0 * h / n as f64)).floor() as isize;
                o[i] = k.clamp(0, n as isize - 1) as usize;
            }
        }
        Some(self.flat(v, o))
    }

    pub fn cell(&self, index: usize) -> CellInfo {
        let reason = self.reasons[index];
        CellInfo {
            index,
            feasible: reason == Reason::Ok,
            man_prime: self.man_q[index] as f64 / MAN_SCALE,
            reason,
        }
    }

    pub fn witness(&self, index: usize) -> Option<&JointVector> {
        self.witnesses[index].as_ref()
    }

    /// Lookup for an arbitrary pose; outside the map reads as unreachable.
    pub fn query(&self, pose: &DualQuaternion) -> CellInfo {
        match self.cell_of(pose) {
            Some(i) => self.cell(i),
            None => CellInfo {
                index: usize::MAX,
                feasible: false,
                man_prime: 0.0,
                reason: Reason::Unreachable,
            },
        }
    }

    pub fn feasible_count(&self) -> usize {
        self.reasons.iter().filter(|r| **r == Reason::Ok).count()
    }

    pub fn reasons(&self) -> &[Reason] {
        &self.reasons
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAP_MAGIC);
        b.extend_from_slice(&MAP_VERSION.to_le_bytes());
        for d in self.dims {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let s = &self.spec;
        let mut f = |v: f64| b.extend_from_slice(&v.to_le_bytes());
        s.workspace.min.iter().for_each(|v| f(*v));
        s.workspace.max.iter().for_each(|v| f(*v));
        f(s.voxel);
        s.orientation.half_range.iter().for_each(|v| f(*v));
        s.orientation.base_rpy.iter().for_each(|v| f(*v));
        f(s.eps_m);
        f(s.ik.tol_pos);
        f(s.ik.tol_rot);
        f(s.ik.damping);
        f(s.clearance);
        for c in s.orientation.cells {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.extend_from_slice(&(s.ik.max_iters as u32).to_le_bytes());
        b.extend_from_slice(&(s.ik.restarts as u32).to_le_bytes());
        b.extend_from_slice(&s.seed.to_le_bytes());
        b.extend_from_slice(&self.meta.robot_hash);
        b.extend_from_slice(&self.meta.obstacle_hash);
        b.extend_from_slice(&self.meta.dof.to_le_bytes());

        let mut packed = vec![0u8; self.reasons.len().div_ceil(4)];
        for (i, r) in self.reasons.iter().enumerate() {
            packed[i / 4] |= (*r as u8) << ((i % 4) * 2);
        }
        b.extend_from_slice(&packed);
        for m in &self.man_q {
            b.extend_from_slice(&m.to_le_bytes());
        }
        for (w, r) in self.witnesses.iter().zip(&self.reasons) {
            if *r == Reason::Ok {
                for v in w.as_ref().expect("feasible cell has witness") {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::parse("feasibility map", m);
        let mut c = Cursor::new(bytes);
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut v = vec![0u8; n];
            c.read_exact(&mut v).map_err(|_| bad("truncated file"))?;
            Ok(v)
        };
        if take(8)? != MAP_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_of = |v: Vec<u8>| u32::from_le_bytes(v.try_into().expect("4 bytes"));
        let f64_of = |v: Vec<u8>| f64::from_le_bytes(v.try_into().expect("8 bytes"));
        let version = u32_of(take(4)?);
        if version != MAP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = u32_of(take(4)?) as usize;
        }
        let mut fl = [0.0f64; 18];
        for v in fl.iter_mut() {
            *v = f64_of(take(8)?);
        }
        let mut cells = [0u32; 3];
        for c in cells.iter_mut() {
            *c = u32_of(take(4)?);
        }
        let max_iters = u32_of(take(4)?) as usize;
        let restarts = u32_of(take(4)?) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let robot_hash: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let obstacle_hash: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let dof = u32_of(take(4)?);
        let spec = MapSpec {
            workspace: Aabb {
                min: [fl[0], fl[1], fl[2]],
                max: [fl[3], fl[4], fl[5]],
            },
            voxel: fl[6],
            orientation: OrientationSpec {
                half_range: [fl[7], fl[8], fl[9]],
                cells,
                base_rpy: [fl[10], fl[11], fl[12]],
            },
            eps_m: fl[13],
            ik: IkParams {
                tol_pos: fl[14],
                tol_rot: fl[15],
                damping: fl[16],
                max_iters,
                restarts,
            },
            seed,
            clearance: fl[17],
        };
        let n: usize = dims.iter().product();
        let packed = take(n.div_ceil(4))?;
        let reasons: Vec<Reason> = (0..n).map(|i| Reason::from_bits(packed[i / 4] >> ((i % 4) * 2))).collect();
        let mut man_q = Vec::with_capacity(n);
        for _ in 0..n {
            man_q.push(u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")));
        }
        let mut witnesses = Vec::with_capacity(n);
        for r in &reasons {
            if *r == Reason::Ok {
                let mut w = Vec::with_capacity(dof as usize);
                for _ in 0..dof {
                    w.push(f64_of(take(8)?));
                }
                witnesses.push(Some(w));
            } else {
                witnesses.push(None);
            }
        }
        if (c.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(FeasibilityMap {
            spec,
            meta: MapMeta {
                robot_hash,
                obstacle_hash,
                dof,
            },
            dims,
            reasons,
            man_q,
            witnesses,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::error::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a map built for a different robot or scene.
    pub fn check_inputs(&self, model: &RobotModel, obstacles: &[Obstacle]) -> Result<()> {
        let robot: [u8; 32] = hex::decode(model.content_hash())
            .ok()
            .and_then(|v| v.try_into().ok())
            .unwrap_or([0; 32]);
        if robot != self.meta.robot_hash {
            return Err(Error::Config("feasibility map was built for a different robot model".into()));
        }
        if obstacle_hash(obstacles) != self.meta.obstacle_hash {
            return Err(Error::Config("feasibility map was built for a different obstacle set".into()));
        }
        Ok(())
    }
}

/// Evaluates every cell center with its own RNG stream.
pub fn build_map(model: &RobotModel, obstacles: &[Obstacle], spec: &MapSpec) -> Result<FeasibilityMap> {
    if !(spec.voxel > 0.0) || !spec.workspace.is_valid() {
        return Err(Error::EmptyTessellation);
    }
    let ws = &spec.workspace;
    let mut dims = [1usize; 6];
    for i in 0..3 {
        if ws.max[i] > ws.min[i] {
            dims[i] = axis_cells(ws.min[i], ws.max[i], spec.voxel);
        }
    }
    let oc = spec.orientation.effective_cells();
    dims[3..6].copy_from_slice(&oc);
    let n: usize = dims.iter().product();
    if n == 0 {
        return Err(Error::EmptyTessellation);
    }
    let grown: Vec<Obstacle> = obstacles.iter().map(|o| o.inflated(spec.clearance.max(0.0))).collect();
    let results: Vec<FeaResult> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let (v, o) = FeasibilityMap::unflat(&dims, idx);
            let pose = FeasibilityMap::center_from(spec, &dims, v, o);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(idx as u64);
            fea(&pose, model, &grown, spec.eps_m, &spec.ik, &mut rng)
        })
        .collect();
    let robot_hash: [u8; 32] = hex::decode(model.content_hash())
        .ok()
        .and_then(|v| v.try_into().ok())
        .unwrap_or([0; 32]);
    let mut reasons = Vec::with_capacity(n);
    let mut man_q = Vec::with_capacity(n);
    let mut witnesses = Vec::with_capacity(n);
    for r in results {
        reasons.push(r.reason);
        man_q.push(quantize_man(r.man_prime));
        witnesses.push(if r.feasible { r.witness } else { None });
    }
    Ok(FeasibilityMap {
        spec: spec.clone(),
        meta: MapMeta {
            robot_hash,
            obstacle_hash: obstacle_hash(obstacles),
            dof: model.dof() as u32,
        },
        dims,
        reasons,
        man_q,
        witnesses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentLabel {
    Feasible,
    Infeasible,
}

/// Inclusive index range `[start, end]` with a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: SegmentLabel,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Groups per-point feasibility flags into maximal runs.
pub fn segments_from_flags(flags: &[bool]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &f) in flags.iter().enumerate() {
        let label = if f { SegmentLabel::Feasible } else { SegmentLabel::Infeasible };
        match out.last_mut() {
            Some(s) if s.label == label => s.end = i,
            _ => out.push(Segment { start: i, end: i, label }),
        }
    }
    out
}

pub fn classify_trajectory(poses: &[DualQuaternion], map: &FeasibilityMap) -> Result<Vec<Segment>> {
    if poses.len() < 2 {
        return Err(Error::TrajectoryTooShort { min: 2, got: poses.len() });
    }
    let flags: Vec<bool> = poses.iter().map(|p| map.query(p).feasible).collect();
    Ok(segments_from_flags(&flags))
}

/// Bracketing feasible indices `(i − 1, j + 1)` around each infeasible run.
/// Runs touching either end of the trajectory are bracketed by the end itself.
pub fn infeasible_brackets(segments: &[Segment], len: usize) -> Vec<(usize, usize)> {
    segments
        .iter()
        .filter(|s| s.label == SegmentLabel::Infeasible)
        .map(|s| (s.start.saturating_sub(1), (s.end + 1).min(len - 1)))
        .collect()
}

/// Spot-check that a stored witness still satisfies every criterion at its cell.
pub fn verify_witness(map: &FeasibilityMap, index: usize, model: &RobotModel, obstacles: &[Obstacle]) -> bool {
    let Some(w) = map.witness(index) else { return false };
    let Ok(pose) = fk(model, w) else { return false };
    let center = map.cell_center(index);
    crate::kinematics::within_tolerance(model, &pose, &center, map.spec.ik.tol_pos, map.spec.ik.tol_rot)
        && witness_passes(model, w, obstacles, map.spec.eps_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::models::planar_2r;
    use proptest::prelude::*;

    pub(crate) fn planar_spec(voxel: f64, seed: u64) -> MapSpec {
        MapSpec {
            workspace: Aabb {
                min: [-2.4, -2.4, 0.0],
                max: [2.4, 2.4, 0.0],
            },
            voxel,
            orientation: OrientationSpec::none(),
            eps_m: 0.1,
            ik: IkParams {
                tol_pos: 1e-3,
                tol_rot: 1e-2,
                max_iters: 100,
                restarts: 12,
                damping: 0.05,
            },
            seed,
            clearance: 0.0,
        }
    }

    #[test]
    fn fea_examples() {
        let m = planar_2r();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ik = IkParams::default();
        let far = DualQuaternion::from_translation(&Vec3::new(3.0, 0.0, 0.0));
        let r = fea(&far, &m, &[], 0.1, &ik, &mut rng);
        assert_eq!((r.feasible, r.man_prime, r.reason), (false, 0.0, Reason::Unreachable));

        let good = fk(&m, &[0.3, 1.2]).unwrap();
        let r = fea(&good, &m, &[], 0.1, &ik, &mut rng);
        assert!(r.feasible && r.man_prime >= 0.1 && r.reason == Reason::Ok);

        // Target (1, 1): elbows sit at (1, 0) and (0, 1); boxes over both.
        let target = DualQuaternion::from_translation(&Vec3::new(1.0, 1.0, 0.0));
        let boxes = [
            Obstacle::cuboid("e1", [0.9, -0.1, -0.1], [1.1, 0.1, 0.1]),
            Obstacle::cuboid("e2", [-0.1, 0.9, -0.1], [0.1, 1.1, 0.1]),
        ];
        let r = fea(&target, &m, &boxes, 0.1, &ik, &mut rng);
        assert_eq!((r.feasible, r.reason), (false, Reason::Collision));
    }

    #[test]
    fn all_unreachable_when_workspace_beyond_reach() {
        let m = planar_2r();
        let mut spec = planar_spec(0.25, 1);
        spec.workspace = Aabb {
            min: [3.0, 3.0, 0.0],
            max: [4.0, 4.0, 0.0],
        };
        let map = build_map(&m, &[], &spec).unwrap();
        assert!(map.reasons().iter().all(|r| *r == Reason::Unreachable));
    }

    #[test]
    fn empty_tessellation_is_an_error() {
        let m = planar_2r();
        let mut spec = planar_spec(0.25, 1);
        spec.workspace.max = spec.workspace.min;
        assert!(matches!(build_map(&m, &[], &spec), Err(Error::EmptyTessellation)));
        let mut spec = planar_spec(0.0, 1);
        spec.voxel = 0.0;
        assert!(matches!(build_map(&m, &[], &spec), Err(Error::EmptyTessellation)));
    }

    #[test]
    fn map_round_trips_and_is_deterministic() {
        let m = planar_2r();
        let obs = [Obstacle::cuboid("b", [0.5, 0.5, -0.1], [0.9, 0.9, 0.1])];
        let spec = planar_spec(0.3, 42);
        let a = build_map(&m, &obs, &spec).unwrap();
        let b = build_map(&m, &obs, &spec).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(bytes, b.to_bytes());
        let back = FeasibilityMap::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert!(FeasibilityMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(a.check_inputs(&m, &obs).is_ok());
        assert!(a.check_inputs(&m, &[]).is_err());
    }

    #[test]
    fn classification_examples() {
        let m = planar_2r();
        let wall = [Obstacle::cuboid("w", [1.15, 0.25, -0.1], [1.25, 0.35, 0.1])];
        let spec = planar_spec(0.1, 3);
        let map = build_map(&m, &wall, &spec).unwrap();
        let line: Vec<DualQuaternion> = (0..=40)
            .map(|k| DualQuaternion::from_translation(&Vec3::new(0.6 + 1.1 * k as f64 / 40.0, 0.3, 0.0)))
            .collect();
        let segs = classify_trajectory(&line, &map).unwrap();
        let labels: Vec<_> = segs.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![SegmentLabel::Feasible, SegmentLabel::Infeasible, SegmentLabel::Feasible]);
        assert_eq!(segs[0].start, 0);
        assert_eq!(segs[2].end, 40);
        let br = infeasible_brackets(&segs, line.len());
        assert_eq!(br, vec![(segs[1].start - 1, segs[1].end + 1)]);

        let free = build_map(&m, &[], &spec).unwrap();
        let segs = classify_trajectory(&line, &free).unwrap();
        assert_eq!(segs, vec![Segment { start: 0, end: 40, label: SegmentLabel::Feasible }]);

        let far: Vec<DualQuaternion> =
            (0..5).map(|k| DualQuaternion::from_translation(&Vec3::new(5.0 + k as f64, 0.0, 0.0))).collect();
        let segs = classify_trajectory(&far, &free).unwrap();
        assert_eq!(segs, vec![Segment { start: 0, end: 4, label: SegmentLabel::Infeasible }]);

        assert!(classify_trajectory(&line[..1], &free).is_err());
    }

    #[test]
    fn classification_is_idempotent_on_subtrajectories() {
        let m = planar_2r();
        let wall = [Obstacle::cuboid("w", [1.15, 0.25, -0.1], [1.25, 0.35, 0.1])];
        let map = build_map(&m, &wall, &planar_spec(0.1, 3)).unwrap();
        let line: Vec<DualQuaternion> = (0..=40)
            .map(|k| DualQuaternion::from_translation(&Vec3::new(0.6 + 1.1 * k as f64 / 40.0, 0.3, 0.0)))
            .collect();
        for s in classify_trajectory(&line, &map).unwrap() {
            if s.len() < 2 {
                continue;
            }
            let sub = classify_trajectory(&line[s.start..=s.end], &map).unwrap();
            assert_eq!(sub.len(), 1);
            assert_eq!(sub[0].label, s.label);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn segments_partition_and_alternate(flags in prop::collection::vec(any::<bool>(), 1..60)) {
            let segs = segments_from_flags(&flags);
            prop_assert_eq!(segs[0].start, 0);
            prop_assert_eq!(segs.last().unwrap().end, flags.len() - 1);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].end + 1, w[1].start);
                prop_assert_ne!(w[0].label, w[1].label);
            }
        }
    }
}
