//! Switching agent: assembles traj_comb from the LfD joint track and the DRL
//! bridges, and learns where to hand control between them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drl::{plan_drl, DrlConfig, DrlPlan};
use crate::dualquat::DualQuaternion;
use crate::error::{Error, Result};
use crate::feasibility::{classify_trajectory, infeasible_brackets, FeasibilityMap, Segment, SegmentLabel};
use crate::geometry::{in_collision, Obstacle};
use crate::hrl::{plan_lfd, HrlConfig, QTables, Task};
use crate::kinematics::{ik, ik_track, normalized_manipulability, IkParams, JointVector, RobotModel};
use crate::lfd::SkillLibrary;
use crate::rl::ppo::{collect_rollout, ppo_update, Agent, Cursor, Env, PpoConfig, StatsRow, Step};
use crate::rl::{Checkpoint, Mlp, Policy};
use crate::trajectory::{joint_blend, joint_distance_inf, max_joint_step};
use crate::workcell::point_reward;

/// Everything the online flow reads.
#[derive(Clone, Copy)]
pub struct Artifacts<'a> {
    pub model: &'a RobotModel,
    pub obstacles: &'a [Obstacle],
    pub lib: &'a SkillLibrary,
    pub tables: &'a QTables,
    pub hrl: &'a HrlConfig,
    pub map: &'a FeasibilityMap,
    /// Absent when training harvested no infeasible segment.
    pub drl: Option<&'a Checkpoint>,
    pub drl_cfg: &'a DrlConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchConfig {
    #[serde(deserialize_with = "crate::rl::ppo::deserialize_switch")]
    pub ppo: PpoConfig,
    pub updates: usize,
    /// Decision points per side of each boundary.
    pub window: usize,
    pub blend_step_deg: f64,
    /// Jittered copies of each task used as training instances.
    pub variants_per_task: usize,
    pub jitter_pos: [f64; 3],
    pub jitter_rot_deg: [f64; 3],
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            ppo: PpoConfig::switch_default(),
            updates: 60,
            window: 5,
            blend_step_deg: 2.0,
            variants_per_task: 8,
            jitter_pos: [0.01, 0.01, 0.0],
            jitter_rot_deg: [0.0; 3],
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.window == 0 || !(self.blend_step_deg > 0.0) {
            return Err(Error::Config("switch: window and blend step must be positive".into()));
        }
        Ok(())
    }

    fn blend_step(&self) -> f64 {
        self.blend_step_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Lfd,
    Drl,
}

/// One waypoint of an assembled trajectory with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotated {
    pub theta: JointVector,
    pub source: Source,
    pub man_prime: f64,
    pub col: bool,
}

/// An infeasible band with its DRL bridge and decision windows (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    /// Bracketing indices into traj_LfD.
    pub a: usize,
    pub b: usize,
    pub drl: DrlPlan,
    pub entry: (usize, usize),
    pub exit: (usize, usize),
}

/// traj_LfD tracked in joint space plus one DRL bridge per infeasible band.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub poses: Vec<DualQuaternion>,
    pub segments: Vec<Segment>,
    pub lfd: Vec<JointVector>,
    pub converged: Vec<bool>,
    pub bands: Vec<Band>,
}

/// `(entry, exit)` per band.
pub type Choices = Vec<(usize, usize)>;

fn nearest_from(traj: &[JointVector], q: &[f64], from: usize) -> usize {
    let mut best = (from, f64::INFINITY);
    for (i, p) in traj.iter().enumerate().skip(from) {
        let d = joint_distance_inf(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn push_point(out: &mut Vec<(JointVector, Source)>, q: &[f64], src: Source) {
    if out.last().is_some_and(|(p, _)| joint_distance_inf(p, q) < 1e-12) {
        return;
    }
    out.push((q.to_vec(), src));
}

/// One tracking solve at `pose` from `seed`. Collisions or a failed solve
/// trigger a retry from the map witness, then random restarts; the tracked
/// iterate is kept when nothing better exists.
fn track_point(
    model: &RobotModel,
    obstacles: &[Obstacle],
    map: &FeasibilityMap,
    pose: &DualQuaternion,
    seed: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> (JointVector, bool) {
    let p = IkParams::default();
    let witness = map.cell_of(pose).filter(|i| map.cell(*i).feasible).and_then(|i| map.witness(i).cloned());
    let seed = match seed {
        Some(q) => q.to_vec(),
        None => witness.clone().unwrap_or_else(|| model.home.clone()),
    };
    let (q, conv) = ik_track(model, pose, &seed, &p);
    if conv && !in_collision(model, &q, obstacles, 0.0) {
        return (q, conv);
    }
    if let Some(near) = nearby_solution(model, obstacles, pose, &seed, &p, rng) {
        return (near, true);
    }
    let mut alts = Vec::new();
    if let Some(w) = &witness {
        if let (wq, true) = ik_track(model, pose, w, &p) {
            alts.push(wq);
        }
    }
    if !conv && alts.is_empty() {
        if let Some(rq) = ik(model, pose, &seed, &p, rng) {
            alts.push(rq);
        }
    }
    if let Some(i) = alts.iter().position(|a| !in_collision(model, a, obstacles, 0.0)) {
        return (alts.swap_remove(i), true);
    }
    if !conv && !alts.is_empty() {
        return (alts.swap_remove(0), true);
    }
    (q, conv)
}

/// Collision-free solution closest to `seed`, searched by descending from
/// perturbed seeds of growing spread.
fn nearby_solution(
    model: &RobotModel,
    obstacles: &[Obstacle],
    pose: &DualQuaternion,
    seed: &[f64],
    p: &IkParams,
    rng: &mut ChaCha8Rng,
) -> Option<JointVector> {
    for spread in NEARBY_SPREADS {
        let best = (0..NEARBY_TRIES)
            .filter_map(|_| {
                let mut s: Vec<f64> = seed.iter().map(|v| v + rng.random_range(-spread..spread)).collect();
                model.clamp(&mut s);
                match ik_track(model, pose, &s, p) {
                    (q, true) if !in_collision(model, &q, obstacles, 0.0) => Some(q),
                    _ => None,
                }
            })
            .min_by(|a, b| joint_distance_inf(a, seed).total_cmp(&joint_distance_inf(b, seed)));
        if best.is_some() {
            return best;
        }
    }
    None
}

const NEARBY_SPREADS: [f64; 4] = [0.15, 0.3, 0.6, 1.2];
const NEARBY_TRIES: usize = 8;

/// IK along `poses`, each solve seeded by the previous one.
pub fn track_ik(model: &RobotModel, obstacles: &[Obstacle], map: &FeasibilityMap, poses: &[DualQuaternion], rng: &mut ChaCha8Rng) -> (Vec<JointVector>, Vec<bool>) {
    let mut out: Vec<JointVector> = Vec::with_capacity(poses.len());
    let mut ok = Vec::with_capacity(poses.len());
    for pose in poses {
        let (q, c) = track_point(model, obstacles, map, pose, out.last().map(|q| q.as_slice()), rng);
        out.push(q);
        ok.push(c);
    }
    (out, ok)
}

/// Runs classification, DRL bridging and joint tracking on a traj_LfD.
/// Tracking restarts from each bridge's end at the band's exit index.
pub fn build_combined(art: &Artifacts, poses: Vec<DualQuaternion>, window: usize, seed: u64) -> Result<Combined> {
    let segments = classify_trajectory(&poses, art.map).map_err(|e| e.in_stage("classify"))?;
    let n = poses.len();
    let brackets = infeasible_brackets(&segments, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resets: BTreeMap<usize, JointVector> = BTreeMap::new();
    let mut lfd: Vec<JointVector> = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    let mut plans = Vec::with_capacity(brackets.len());
    let mut next = 0;
    for (k, pose) in poses.iter().enumerate() {
        let seed = resets.get(&k).or(lfd.last()).map(|q| q.as_slice());
        let (q, c) = track_point(art.model, art.obstacles, art.map, pose, seed, &mut rng);
        lfd.push(q);
        converged.push(c);
        while next < brackets.len() && brackets[next].0 == k {
            let (a, b) = brackets[next];
            let ckpt = art.drl.ok_or_else(|| Error::MissingArtifact("drl checkpoint".into())).map_err(|e| e.in_stage("plan_drl"))?;
            let plan = plan_drl(ckpt, art.model, art.obstacles, art.drl_cfg, &lfd[a], &poses[b]).map_err(|e| e.in_stage("plan_drl"))?;
            resets.insert(b, plan.traj.last().expect("nonempty bridge").clone());
            plans.push(plan);
            next += 1;
        }
    }

    let mut bands = Vec::with_capacity(brackets.len());
    for (i, (&(a, b), drl)) in brackets.iter().zip(plans).enumerate() {
        let lo = if i == 0 { 0 } else { (brackets[i - 1].1 + a) / 2 };
        let hi = if i + 1 == brackets.len() { n - 1 } else { (b + brackets[i + 1].0).div_ceil(2) };
        let entry = (a.saturating_sub(window).max(lo), (a + window).min(b - 1).max(a));
        let exit = (b.saturating_sub(window).max(a + 1), (b + window).min(hi).max(b));
        bands.push(Band { a, b, drl, entry, exit });
    }
    Ok(Combined {
        poses,
        segments,
        lfd,
        converged,
        bands,
    })
}

impl Combined {
    pub fn heuristic(&self) -> Choices {
        self.bands.iter().map(|b| (b.a, b.b)).collect()
    }

    /// Raw (unblended) waypoint sequence for the index range `[lo, hi]` of
    /// traj_LfD with the given bands and choices.
    fn raw(&self, lo: usize, hi: usize, bands: &[(&Band, usize, usize)]) -> Vec<(JointVector, Source)> {
        let mut out = Vec::new();
        let mut cursor = lo;
        for (band, e, x) in bands {
            for q in &self.lfd[cursor..=*e] {
                push_point(&mut out, q, Source::Lfd);
            }
            let s = nearest_from(&band.drl.traj, &self.lfd[*e], 0);
            let t = nearest_from(&band.drl.traj, &self.lfd[*x], s);
            for q in &band.drl.traj[s..=t] {
                push_point(&mut out, q, Source::Drl);
            }
            cursor = *x;
        }
        for q in &self.lfd[cursor..=hi] {
            push_point(&mut out, q, Source::Lfd);
        }
        out
    }

    /// Executed trajectory for `choices`: blended at `step` radians.
    pub fn assemble(&self, choices: &[(usize, usize)], step: f64, model: &RobotModel, obstacles: &[Obstacle]) -> Vec<Annotated> {
        let sel: Vec<(&Band, usize, usize)> = self.bands.iter().zip(choices).map(|(b, &(e, x))| (b, e, x)).collect();
        annotate(&blend(&self.raw(0, self.lfd.len() - 1, &sel), step), model, obstacles)
    }

    /// r_s of traj_comb for `choices`.
    pub fn reward(&self, choices: &[(usize, usize)], step: f64, model: &RobotModel, obstacles: &[Obstacle]) -> f64 {
        let sel: Vec<(&Band, usize, usize)> = self.bands.iter().zip(choices).map(|(b, &(e, x))| (b, e, x)).collect();
        waypoint_reward(&self.raw(0, self.lfd.len() - 1, &sel), step, model, obstacles)
    }

    /// r_s of the band-local piece `[entry.0, exit.1]` for one choice.
    pub fn local_reward(&self, band: usize, e: usize, x: usize, step: f64, model: &RobotModel, obstacles: &[Obstacle]) -> f64 {
        let b = &self.bands[band];
        waypoint_reward(&self.raw(b.entry.0, b.exit.1, &[(b, e, x)]), step, model, obstacles)
    }
}

/// `Σ (man' − COL)` over traj_comb waypoints, where a waypoint counts as
/// colliding when it or the blended motion into it collides.
fn waypoint_reward(raw: &[(JointVector, Source)], step: f64, model: &RobotModel, obstacles: &[Obstacle]) -> f64 {
    raw.iter()
        .enumerate()
        .map(|(i, (q, _))| {
            let col = in_collision(model, q, obstacles, 0.0)
                || (i > 0 && joint_blend(&raw[i - 1].0, q, step).iter().any(|p| in_collision(model, p, obstacles, 0.0)));
            point_reward(normalized_manipulability(model, q), col)
        })
        .sum()
}

fn blend(raw: &[(JointVector, Source)], step: f64) -> Vec<(JointVector, Source)> {
    let mut out = Vec::with_capacity(raw.len());
    for (i, (q, s)) in raw.iter().enumerate() {
        if i > 0 {
            out.extend(joint_blend(&raw[i - 1].0, q, step).into_iter().map(|b| (b, *s)));
        }
        out.push((q.clone(), *s));
    }
    out
}

fn annotate(pts: &[(JointVector, Source)], model: &RobotModel, obstacles: &[Obstacle]) -> Vec<Annotated> {
    pts.iter()
        .map(|(q, s)| Annotated {
            man_prime: normalized_manipulability(model, q),
            col: in_collision(model, q, obstacles, 0.0),
            theta: q.clone(),
            source: *s,
        })
        .collect()
}

/// Band decision problem with every choice's local r_s precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct BandInstance {
    pub entry: (usize, usize),
    pub exit: (usize, usize),
    pub heuristic: (usize, usize),
    /// `table[e − entry.0][x − exit.0]`, `None` when `x ≤ e`.
    pub table: Vec<Vec<Option<f64>>>,
    /// Per window index: LfD joints, aligned DRL joints, and `(man', COL)` of each.
    features: Vec<Vec<f64>>,
    scale: f64,
}

impl BandInstance {
    pub fn new(comb: &Combined, band: usize, step: f64, model: &RobotModel, obstacles: &[Obstacle]) -> Self {
        let b = &comb.bands[band];
        let mut table = Vec::new();
        for e in b.entry.0..=b.entry.1 {
            let row = (b.exit.0..=b.exit.1)
                .map(|x| (x > e).then(|| comb.local_reward(band, e, x, step, model, obstacles)))
                .collect();
            table.push(row);
        }
        let drl = &b.drl.traj;
        let pi = std::f64::consts::PI;
        let mut features = Vec::new();
        for k in b.entry.0..=b.exit.1 {
            let j = if k <= b.a {
                0
            } else if k >= b.b {
                drl.len() - 1
            } else {
                ((k - b.a) as f64 / (b.b - b.a) as f64 * (drl.len() - 1) as f64).round() as usize
            };
            let (ql, qd) = (&comb.lfd[k], &drl[j]);
            let mut f: Vec<f64> = ql.iter().map(|v| v / pi).collect();
            f.extend(qd.iter().map(|v| v / pi));
            for q in [ql, qd] {
                f.push(normalized_manipulability(model, q));
                f.push(f64::from(u8::from(in_collision(model, q, obstacles, 0.0))));
            }
            features.push(f);
        }
        let n_heur = comb.raw(b.entry.0, b.exit.1, &[(b, b.a, b.b)]).len();
        BandInstance {
            entry: b.entry,
            exit: b.exit,
            heuristic: (b.a, b.b),
            table,
            features,
            scale: 1.0 / n_heur.max(1) as f64,
        }
    }

    pub fn reward(&self, e: usize, x: usize) -> Option<f64> {
        self.table[e - self.entry.0][x - self.exit.0]
    }

    pub fn heuristic_reward(&self) -> f64 {
        self.reward(self.heuristic.0, self.heuristic.1).expect("heuristic choice is admissible")
    }

    /// Brute-force best choice over every admissible pair.
    pub fn oracle(&self) -> ((usize, usize), f64) {
        let mut best = (self.heuristic, self.heuristic_reward());
        for e in self.entry.0..=self.entry.1 {
            for x in self.exit.0..=self.exit.1 {
                if let Some(r) = self.reward(e, x) {
                    if r > best.1 {
                        best = ((e, x), r);
                    }
                }
            }
        }
        best
    }

    fn obs(&self, p: usize, exit_phase: bool, window: usize) -> Vec<f64> {
        let lo = self.entry.0 as isize;
        let hi = self.exit.1 as isize;
        let mut o = Vec::new();
        for off in -(window as isize)..=window as isize {
            let k = (p as isize + off).clamp(lo, hi) - lo;
            o.extend(&self.features[k as usize]);
        }
        let boundary = if exit_phase { self.heuristic.1 } else { self.heuristic.0 };
        o.push((p as f64 - boundary as f64) / window as f64);
        o.push(f64::from(u8::from(exit_phase)));
        o
    }

    /// First exit candidate once the entry is fixed.
    fn exit_start(&self, e: usize) -> usize {
        self.exit.0.max(e + 1)
    }

    /// Choice taken by a greedy policy.
    pub fn decide(&self, policy: &Policy, window: usize) -> Result<(usize, usize)> {
        let mut p = self.entry.0;
        while p < self.entry.1 && policy.greedy(&self.obs(p, false, window))?[0] as usize != 1 {
            p += 1;
        }
        let e = p;
        let mut p = self.exit_start(e);
        while p < self.exit.1 && policy.greedy(&self.obs(p, true, window))?[0] as usize != 0 {
            p += 1;
        }
        Ok((e, p))
    }
}

pub fn switch_obs_dim(n: usize, window: usize) -> usize {
    (2 * window + 1) * (2 * n + 4) + 2
}

/// Sequential boundary decisions. Action 1 at an entry point switches to
/// DRL there; action 0 at an exit point rejoins LfD. Window ends force the
/// choice. The terminal reward is the local r_s gain over the boundary
/// heuristic, normalized by the heuristic piece's length.
pub struct SwitchEnv<'a> {
    pub instances: &'a [BandInstance],
    pub window: usize,
    dim: usize,
    cur: usize,
    exit_phase: bool,
    p: usize,
    e: usize,
}

impl<'a> SwitchEnv<'a> {
    pub fn new(instances: &'a [BandInstance], window: usize, dof: usize) -> Self {
        SwitchEnv {
            instances,
            window,
            dim: switch_obs_dim(dof, window),
            cur: 0,
            exit_phase: false,
            p: 0,
            e: 0,
        }
    }
}

impl Env for SwitchEnv<'_> {
    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.cur = rng.random_range(0..self.instances.len());
        self.exit_phase = false;
        self.p = self.instances[self.cur].entry.0;
        self.instances[self.cur].obs(self.p, false, self.window)
    }

    fn step(&mut self, action: &[f64], _: &mut ChaCha8Rng) -> Step {
        let inst = &self.instances[self.cur];
        let a = action[0] as usize;
        if !self.exit_phase {
            if a == 1 || self.p >= inst.entry.1 {
                self.e = self.p;
                self.exit_phase = true;
                self.p = inst.exit_start(self.e);
            } else {
                self.p += 1;
            }
        } else if a == 0 || self.p >= inst.exit.1 {
            let r = inst.reward(self.e, self.p).expect("exit after entry");
            return Step {
                obs: inst.obs(self.p, true, self.window),
                reward: (r - inst.heuristic_reward()) * inst.scale,
                terminal: true,
                truncated: false,
            };
        } else {
            self.p += 1;
        }
        Step {
            obs: inst.obs(self.p, self.exit_phase, self.window),
            reward: 0.0,
            terminal: false,
            truncated: false,
        }
    }
}

/// Band instances of a task's jittered variants. Variants whose LfD plan
/// fails or that have no infeasible band contribute nothing.
pub fn band_instances(art: &Artifacts, tasks: &[Task], cfg: &SwitchConfig, seed: u64) -> Vec<BandInstance> {
    let rot = cfg.jitter_rot_deg.map(f64::to_radians);
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..cfg.variants_per_task).map(move |v| (t, v))).collect();
    jobs.par_iter()
        .map(|&(t, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((t as u64) << 32) | v as u64);
            let task = if v == 0 { tasks[t].clone() } else { tasks[t].jittered(cfg.jitter_pos, rot, &mut rng) };
            let Ok(plan) = plan_lfd(&task, art.lib, art.tables, art.hrl) else { return Vec::new() };
            let Ok(comb) = build_combined(art, plan.poses, cfg.window, rng.random()) else { return Vec::new() };
            (0..comb.bands.len())
                .map(|b| BandInstance::new(&comb, b, cfg.blend_step(), art.model, art.obstacles))
                .collect()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone)]
pub struct SwitchTraining {
    pub checkpoint: Checkpoint,
    pub stats: Vec<StatsRow>,
    pub instances: usize,
}

fn switch_checkpoint(policy: Policy, value: Mlp, model: &RobotModel, cfg: &SwitchConfig, seed: u64) -> Result<Checkpoint> {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "switch".into());
    meta.insert("n".into(), model.dof().to_string());
    meta.insert("window".into(), cfg.window.to_string());
    meta.insert("robot".into(), model.content_hash().to_string());
    meta.insert("seed".into(), seed.to_string());
    meta.insert("config".into(), serde_json::to_string(cfg)?);
    Ok(Checkpoint { meta, policy, value })
}

pub fn check_switch_checkpoint(ckpt: &Checkpoint, model: &RobotModel, window: usize) -> Result<()> {
    ckpt.require("kind", "switch")?;
    ckpt.require("n", &model.dof().to_string())?;
    ckpt.require("window", &window.to_string())
}

/// Trains the categorical switching policy on band instances drawn from `tasks`.
pub fn train_switch(art: &Artifacts, tasks: &[Task], cfg: &SwitchConfig, seed: u64) -> Result<SwitchTraining> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    cfg.validate()?;
    let instances = band_instances(art, tasks, cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4348);
    let n = art.model.dof();
    let mut sizes = vec![switch_obs_dim(n, cfg.window)];
    sizes.extend(&cfg.ppo.hidden);
    let mut vsizes = sizes.clone();
    sizes.push(2);
    vsizes.push(1);
    let policy = Policy::categorical(&sizes, &mut rng);
    let value = Mlp::new(&vsizes, 1.0, &mut rng);
    let mut agent = Agent::new(policy, value, cfg.ppo.learning_rate);
    let mut stats = Vec::new();
    if !instances.is_empty() {
        let mut env = SwitchEnv::new(&instances, cfg.window, n);
        let mut cursor = Cursor::default();
        for epoch in 0..cfg.updates {
            let batch = collect_rollout(&mut env, &agent, cfg.ppo.num_steps, &mut cursor, &mut rng)?;
            let s = ppo_update(&mut agent, &batch, &cfg.ppo, &mut rng);
            log::debug!("switch epoch {epoch}: reward {:.4}", s.mean_reward);
            stats.push(StatsRow {
                epoch,
                mean_reward: s.mean_reward,
                clip_frac: s.clip_frac,
                approx_kl: s.approx_kl,
                eval_reward: None,
            });
        }
    } else {
        log::info!("no infeasible bands in the training tasks; switching policy left untrained");
    }
    Ok(SwitchTraining {
        checkpoint: switch_checkpoint(agent.policy, agent.value, art.model, cfg, seed)?,
        stats,
        instances: instances.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReport {
    pub a: usize,
    pub b: usize,
    pub entry: usize,
    pub exit: usize,
    pub drl_points: usize,
    pub drl_reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceRun {
    pub source: Source,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridReport {
    pub task: String,
    pub r_s: f64,
    pub r_s_heuristic: f64,
    pub points: usize,
    pub drl_points: usize,
    pub collisions: usize,
    pub max_step_deg: f64,
    pub bands: Vec<BandReport>,
    pub sources: Vec<SourceRun>,
    pub ik_converged: bool,
    pub drl_reached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridResult {
    pub traj_final: Vec<JointVector>,
    pub annotated: Vec<Annotated>,
    pub report: HybridReport,
}

fn runs(pts: &[Annotated]) -> Vec<SourceRun> {
    let mut out: Vec<SourceRun> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.source == p.source => r.end = i,
            _ => out.push(SourceRun {
                source: p.source,
                start: i,
                end: i,
            }),
        }
    }
    out
}

/// How switch points are chosen in [`finalize`].
#[derive(Clone, Copy)]
pub enum SwitchMode<'a> {
    Policy(&'a Policy),
    Heuristic,
    Oracle,
}

/// Applies the switch choices to traj_comb and produces traj_final with its report.
pub fn finalize(art: &Artifacts, comb: &Combined, task_id: &str, cfg: &SwitchConfig, mode: SwitchMode) -> Result<HybridResult> {
    let step = cfg.blend_step();
    let mut choices = Vec::with_capacity(comb.bands.len());
    for i in 0..comb.bands.len() {
        let c = match mode {
            SwitchMode::Heuristic => (comb.bands[i].a, comb.bands[i].b),
            SwitchMode::Policy(p) => BandInstance::new(comb, i, step, art.model, art.obstacles).decide(p, cfg.window)?,
            SwitchMode::Oracle => BandInstance::new(comb, i, step, art.model, art.obstacles).oracle().0,
        };
        choices.push(c);
    }
    let annotated = comb.assemble(&choices, step, art.model, art.obstacles);
    let traj_final: Vec<JointVector> = annotated.iter().map(|a| a.theta.clone()).collect();
    let report = HybridReport {
        task: task_id.to_string(),
        r_s: comb.reward(&choices, step, art.model, art.obstacles),
        r_s_heuristic: comb.reward(&comb.heuristic(), step, art.model, art.obstacles),
        points: annotated.len(),
        drl_points: annotated.iter().filter(|a| a.source == Source::Drl).count(),
        collisions: annotated.iter().filter(|a| a.col).count(),
        max_step_deg: max_joint_step(&traj_final).to_degrees(),
        bands: comb
            .bands
            .iter()
            .zip(&choices)
            .map(|(b, &(e, x))| BandReport {
                a: b.a,
                b: b.b,
                entry: e,
                exit: x,
                drl_points: b.drl.traj.len(),
                drl_reached: b.drl.success,
            })
            .collect(),
        sources: runs(&annotated),
        ik_converged: comb
            .segments
            .iter()
            .filter(|s| s.label == SegmentLabel::Feasible)
            .all(|s| comb.converged[s.start..=s.end].iter().all(|c| *c)),
        drl_reached: comb.bands.iter().all(|b| b.drl.success),
    };
    Ok(HybridResult {
        traj_final,
        annotated,
        report,
    })
}

/// Online flow: plan_lfd, classify, plan_drl per band, IK, assemble, switch.
pub fn execute_final(art: &Artifacts, switch: &Checkpoint, task: &Task, cfg: &SwitchConfig, seed: u64) -> Result<HybridResult> {
    check_switch_checkpoint(switch, art.model, cfg.window).map_err(|e| e.in_stage("switch"))?;
    let plan = plan_lfd(task, art.lib, art.tables, art.hrl).map_err(|e| e.in_stage("plan_lfd"))?;
    let comb = build_combined(art, plan.poses, cfg.window, seed)?;
    finalize(art, &comb, &task.id, cfg, SwitchMode::Policy(&switch.policy)).map_err(|e| e.in_stage("switch"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::models;
    use crate::workcell::switch_reward;

    fn annotated(model: &RobotModel, qs: &[JointVector]) -> Vec<Annotated> {
        annotate(&qs.iter().map(|q| (q.clone(), Source::Lfd)).collect::<Vec<_>>(), model, &[])
    }

    #[test]
    fn reward_examples() {
        let m = models::desk_3r();
        let home = m.home.clone();
        let traj = vec![home.clone(); 7];
        assert!((switch_reward(&m, &[], &traj) - 7.0).abs() < 1e-9);
        let obs = [Obstacle::sphere("s", [0.0, 0.0, 0.0], 0.05)];
        let r = switch_reward(&m, &obs, &[home.clone()]);
        assert!((r - (1.0 - 1.0)).abs() < 1e-9);
        let a = vec![vec![0.1, 0.5, 0.2], vec![0.2, 0.6, 0.3]];
        let b = vec![vec![-0.4, 1.5, 0.2]];
        let ab: Vec<_> = a.iter().chain(&b).cloned().collect();
        let sum = switch_reward(&m, &obs, &a) + switch_reward(&m, &obs, &b);
        assert!((switch_reward(&m, &obs, &ab) - sum).abs() < 1e-12);
        assert_eq!(annotated(&m, &a).len(), 2);
    }

    fn line(a: &[f64], b: &[f64], n: usize) -> Vec<JointVector> {
        (0..=n)
            .map(|k| a.iter().zip(b).map(|(x, y)| x + (y - x) * k as f64 / n as f64).collect())
            .collect()
    }

    /// A combined trajectory built by hand: LfD is a straight joint line that
    /// passes through a post, the DRL bridge detours around it.
    fn toy() -> (RobotModel, Vec<Obstacle>, Combined) {
        let m = models::desk_3r();
        let lfd = line(&[-0.8, 0.3, 0.3], &[0.8, 0.3, 0.3], 40);
        let obs = vec![Obstacle::sphere("post", [0.25, 0.0, 0.0], 0.02)];
        let (a, b) = (14, 26);
        let mut drl = line(&lfd[a], &[lfd[a][0], 1.2, 0.3], 8);
        drl.extend(line(&[lfd[a][0], 1.2, 0.3], &[lfd[b][0], 1.2, 0.3], 10).into_iter().skip(1));
        drl.extend(line(&[lfd[b][0], 1.2, 0.3], &lfd[b], 8).into_iter().skip(1));
        let n = drl.len();
        let comb = Combined {
            poses: Vec::new(),
            segments: Vec::new(),
            converged: vec![true; lfd.len()],
            bands: vec![Band {
                a,
                b,
                drl: DrlPlan {
                    collisions: vec![false; n],
                    traj: drl,
                    success: true,
                },
                entry: (a - 5, a + 5),
                exit: (b - 5, b + 5),
            }],
            lfd,
        };
        (m, obs, comb)
    }

    #[test]
    fn assembled_steps_are_bounded_and_within_limits() {
        let (m, obs, comb) = toy();
        let step = 2f64.to_radians();
        for choice in [(14, 26), (9, 31), (19, 21), (12, 29)] {
            let pts = comb.assemble(&[choice], step, &m, &obs);
            let traj: Vec<JointVector> = pts.iter().map(|p| p.theta.clone()).collect();
            assert!(max_joint_step(&traj) <= step + 1e-12);
            assert!(traj.iter().all(|q| m.within_limits(q)));
            assert_eq!(pts.first().unwrap().theta, comb.lfd[0]);
            assert_eq!(pts.last().unwrap().theta, *comb.lfd.last().unwrap());
            assert!(pts.iter().any(|p| p.source == Source::Drl));
        }
    }

    #[test]
    fn local_table_matches_global_differences() {
        let (m, obs, comb) = toy();
        let step = 2f64.to_radians();
        let inst = BandInstance::new(&comb, 0, step, &m, &obs);
        let global = |c: (usize, usize)| comb.reward(&[c], step, &m, &obs);
        let g0 = global(inst.heuristic);
        for c in [(10, 28), (16, 22), (9, 31)] {
            let local = inst.reward(c.0, c.1).unwrap() - inst.heuristic_reward();
            assert!((local - (global(c) - g0)).abs() < 1e-9, "{c:?}");
        }
        let (best, r) = inst.oracle();
        assert!(r >= inst.heuristic_reward());
        assert!(inst.reward(best.0, best.1).is_some());
    }

    #[test]
    fn env_forces_choice_at_window_end() {
        let (m, obs, comb) = toy();
        let inst = vec![BandInstance::new(&comb, 0, 2f64.to_radians(), &m, &obs)];
        let mut env = SwitchEnv::new(&inst, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = env.reset(&mut rng);
        assert_eq!(o.len(), switch_obs_dim(3, 5));
        // Never switch, never rejoin: entry forced at 19, exit forced at 31.
        let mut steps = 0;
        loop {
            steps += 1;
            let a = if env.exit_phase { 1.0 } else { 0.0 };
            let s = env.step(&[a], &mut rng);
            if s.terminal {
                let expect = (inst[0].reward(19, 31).unwrap() - inst[0].heuristic_reward()) * inst[0].scale;
                assert!((s.reward - expect).abs() < 1e-12);
                break;
            }
            assert_eq!(s.reward, 0.0);
        }
        assert_eq!(steps, 11 + 11);
    }

    #[test]
    fn policy_learns_to_beat_heuristic_on_toy_band() {
        let (m, obs, comb) = toy();
        let inst = vec![BandInstance::new(&comb, 0, 2f64.to_radians(), &m, &obs)];
        let (best, r_best) = inst[0].oracle();
        let cfg = SwitchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sizes = vec![switch_obs_dim(3, 5)];
        sizes.extend(&cfg.ppo.hidden);
        let mut vs = sizes.clone();
        sizes.push(2);
        vs.push(1);
        let mut agent = Agent::new(Policy::categorical(&sizes, &mut rng), Mlp::new(&vs, 1.0, &mut rng), cfg.ppo.learning_rate);
        let mut env = SwitchEnv::new(&inst, 5, 3);
        let mut cursor = Cursor::default();
        for _ in 0..40 {
            let batch = collect_rollout(&mut env, &agent, cfg.ppo.num_steps, &mut cursor, &mut rng).unwrap();
            ppo_update(&mut agent, &batch, &cfg.ppo, &mut rng);
        }
        let (e, x) = inst[0].decide(&agent.policy, 5).unwrap();
        let got = inst[0].reward(e, x).unwrap();
        assert!(got >= inst[0].heuristic_reward(), "learned {got} heuristic {}", inst[0].heuristic_reward());
        assert!(got >= r_best - 0.1 * r_best.abs(), "learned {:?} {got}, oracle {best:?} {r_best}", (e, x));
    }
}
