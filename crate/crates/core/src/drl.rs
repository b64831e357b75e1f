//! Joint-space planner trained with PPO on the infeasible task segments the
//! global planner could not realize.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dualquat::{DualQuaternion, Vec3};
use crate::error::{read_to_string, write_bytes, Error, Result};
use crate::geometry::{in_collision, ray_bundle, Obstacle, DEFAULT_MAX_RANGE, RAY_COUNT};
use crate::kinematics::{frames, ik, normalized_manipulability, IkParams, JointVector, RobotModel};
use crate::rl::ppo::{collect_rollout, ppo_update, Agent, Cursor, Env, PpoConfig, StatsRow, Step};
use crate::rl::{Checkpoint, Mlp, Policy};
use crate::trajectory::joint_distance_inf;

pub const LAYOUT_VERSION: u32 = 1;
const START_ATTEMPTS: usize = 16;
const SWEEP_STEP: f64 = 2.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `man'(θ)` when collision-free, else −1, minus distance.
    Graded,
    /// The map's 0/1 feasibility in place of `man'`.
    Binary,
    /// Distance only, no feasibility term.
    DistanceOnly,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::Graded => "graded",
            RewardKind::Binary => "binary",
            RewardKind::DistanceOnly => "distance_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrlConfig {
    #[serde(deserialize_with = "crate::rl::ppo::deserialize_drl")]
    pub ppo: PpoConfig,
    pub updates: usize,
    pub max_step_deg: f64,
    pub dt: f64,
    pub budget: usize,
    pub goal_radius: f64,
    /// Per-step cost added outside the goal ball during training.
    pub time_cost: f64,
    pub reward: RewardKind,
    /// Manipulability floor for the binary feasibility term.
    pub eps_m: f64,
    pub ray_range: f64,
    /// Greedy evaluation episodes after every update (0 disables).
    pub eval_episodes: usize,
    /// Reject a step whose swept motion enters collision from a free state.
    pub block_collisions: bool,
}

impl Default for DrlConfig {
    fn default() -> Self {
        DrlConfig {
            ppo: PpoConfig::drl_default(),
            updates: 50,
            max_step_deg: 5.0,
            dt: 0.05,
            budget: 300,
            goal_radius: 0.25 * 0.3 / 0.9,
            time_cost: 1.0,
            reward: RewardKind::Graded,
            eps_m: 0.1,
            ray_range: DEFAULT_MAX_RANGE,
            eval_episodes: 0,
            block_collisions: true,
        }
    }
}

/// Start/goal pair bracketing an infeasible run: `(D_{i−1}, D_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub start: DualQuaternion,
    pub goal: DualQuaternion,
    /// Joint configuration the tracker held at `start`, when known.
    pub start_q: Option<JointVector>,
}

/// One pair per line: 16 scalars (start then goal), optionally followed by
/// the start configuration.
pub fn format_segments(pairs: &[SegmentPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&format!("{} {}", p.start, p.goal));
        for v in p.start_q.iter().flatten() {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    s
}

pub fn parse_segments(text: &str) -> Result<Vec<SegmentPair>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let at = || format!("segments line {}", ln + 1);
        if tok.len() < 16 {
            return Err(Error::parse(at(), format!("expected at least 16 scalars, got {}", tok.len())));
        }
        let start_q = if tok.len() > 16 {
            let q = tok[16..]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|e| Error::parse(at(), e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            Some(q)
        } else {
            None
        };
        out.push(SegmentPair {
            start: DualQuaternion::parse(&tok[..8].join(" "))?,
            goal: DualQuaternion::parse(&tok[8..16].join(" "))?,
            start_q,
        });
    }
    Ok(out)
}

pub fn save_segments(path: &Path, pairs: &[SegmentPair]) -> Result<()> {
    write_bytes(path, format_segments(pairs).as_bytes())
}

pub fn load_segments(path: &Path) -> Result<Vec<SegmentPair>> {
    parse_segments(&read_to_string(path)?)
}

/// `⟨JP, JO, LV, AV, TP, TO, RL⟩` in meters and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct DrlState {
    pub jp: Vec<Vec3>,
    pub jo: Vec<[f64; 3]>,
    pub lv: Vec<Vec3>,
    pub av: Vec<Vec3>,
    pub tp: Vec3,
    pub to: [f64; 3],
    pub rl: [f64; RAY_COUNT],
}

/// Observation length for `n` joints: the state blocks plus the goal offset
/// and normalized joint angles.
pub fn obs_dim(n: usize) -> usize {
    12 * n + 6 + RAY_COUNT + 3 + n
}

/// Hash of the observation layout; checkpoints refuse to run on a mismatch.
pub fn layout_hash(n: usize) -> String {
    let desc = format!("v{LAYOUT_VERSION}:JP{n}x3,JO{n}x3,LV{n}x3,AV{n}x3,TP3,TO3,RL{RAY_COUNT},GOAL3,THETA{n}");
    hex::encode(&Sha256::digest(desc.as_bytes())[..8])
}

/// Graded or binary feasibility term, or nothing for the distance-only variant.
pub fn fea_term(kind: RewardKind, collides: bool, within_limits: bool, man_prime: f64, eps_m: f64) -> f64 {
    let ok = !collides && within_limits;
    match kind {
        RewardKind::Graded if ok => man_prime,
        RewardKind::Binary if ok => f64::from(man_prime >= eps_m),
        RewardKind::DistanceOnly => 0.0,
        _ => -1.0,
    }
}

/// `fea − d` outside the goal ball, `0.1` inside.
pub fn drl_reward(fea: f64, d: f64, r: f64) -> f64 {
    if d < r {
        0.1
    } else {
        fea - d
    }
}

pub struct Simulator<'a> {
    pub model: &'a RobotModel,
    pub obstacles: &'a [Obstacle],
    pub cfg: &'a DrlConfig,
}

/// Outcome of one kinematic step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub theta: JointVector,
    pub state: DrlState,
    pub d: f64,
    /// The commanded motion collides (penalized even when blocked).
    pub collides: bool,
    /// The motion was rejected and `theta` left unchanged.
    pub blocked: bool,
    pub man_prime: f64,
    /// Some joint hit a limit and was clamped.
    pub clamped: bool,
}

impl Simulator<'_> {
    pub fn state(&self, theta: &[f64], prev: Option<&DrlState>) -> DrlState {
        let f = frames(self.model, theta).expect("joint vector sized by caller");
        let n = self.model.dof();
        let jp: Vec<Vec3> = f[1..=n].iter().map(|d| d.translation()).collect();
        let jo: Vec<[f64; 3]> = f[1..=n].iter().map(|d| d.euler()).collect();
        let (lv, av) = match prev {
            Some(p) => (
                jp.iter().zip(&p.jp).map(|(a, b)| (a - b) / self.cfg.dt).collect(),
                f[1..=n]
                    .iter()
                    .zip(&p.jo)
                    .map(|(d, e)| {
                        let q0 = crate::dualquat::Quaternion::from_euler(e[0], e[1], e[2]);
                        (q0.conjugate() * d.real).log_vector() / self.cfg.dt
                    })
                    .collect(),
            ),
            None => (vec![Vec3::zeros(); n], vec![Vec3::zeros(); n]),
        };
        let tool = f[n + 1];
        DrlState {
            jp,
            jo,
            lv,
            av,
            tp: tool.translation(),
            to: tool.euler(),
            rl: ray_bundle(self.model, theta, self.obstacles, self.cfg.ray_range),
        }
    }

    /// Applies an increment command `a ∈ [−1, 1]^n` (clamped) scaled by the
    /// per-step limit, then clamps to the joint limits. With blocking on, a
    /// motion that collides anywhere along its 2°-sampled sweep from a free
    /// configuration is rejected.
    pub fn step(&self, theta: &[f64], prev: &DrlState, action: &[f64], goal: &Vec3) -> Transition {
        let dmax = self.cfg.max_step_deg.to_radians();
        let mut next: JointVector = theta.iter().zip(action).map(|(t, a)| t + a.clamp(-1.0, 1.0) * dmax).collect();
        let clamped = self.model.clamp(&mut next);
        let (collides, blocked) = if self.cfg.block_collisions && !in_collision(self.model, theta, self.obstacles, 0.0) {
            let hit = self.sweep_collides(theta, &next);
            (hit, hit)
        } else {
            (in_collision(self.model, &next, self.obstacles, 0.0), false)
        };
        if blocked {
            next = theta.to_vec();
        }
        let state = self.state(&next, Some(prev));
        let d = (state.tp - goal).norm();
        Transition {
            collides,
            blocked,
            man_prime: normalized_manipulability(self.model, &next),
            theta: next,
            state,
            d,
            clamped,
        }
    }

    fn sweep_collides(&self, a: &[f64], b: &[f64]) -> bool {
        let parts = (joint_distance_inf(a, b) / SWEEP_STEP).ceil().max(1.0) as usize;
        (1..=parts).any(|k| {
            let u = k as f64 / parts as f64;
            let q: JointVector = a.iter().zip(b).map(|(x, y)| x + (y - x) * u).collect();
            in_collision(self.model, &q, self.obstacles, 0.0)
        })
    }

    pub fn observe(&self, s: &DrlState, theta: &[f64], goal: &Vec3) -> Vec<f64> {
        let reach = self.model.reach_bound().max(1e-9);
        let vscale = self.cfg.dt / (reach * 0.1);
        let ascale = self.cfg.dt / self.cfg.max_step_deg.to_radians().max(1e-9);
        let pi = std::f64::consts::PI;
        let mut o = Vec::with_capacity(obs_dim(theta.len()));
        o.extend(s.jp.iter().flat_map(|p| p.iter().map(|v| v / reach).collect::<Vec<_>>()));
        o.extend(s.jo.iter().flat_map(|e| e.map(|v| v / pi)));
        o.extend(s.lv.iter().flat_map(|p| p.iter().map(|v| v * vscale).collect::<Vec<_>>()));
        o.extend(s.av.iter().flat_map(|p| p.iter().map(|v| v * ascale).collect::<Vec<_>>()));
        o.extend(s.tp.iter().map(|v| v / reach));
        o.extend(s.to.map(|v| v / pi));
        o.extend(s.rl.iter().map(|v| v / self.cfg.ray_range));
        o.extend((goal - s.tp).iter().map(|v| v / reach));
        for (t, j) in theta.iter().zip(&self.model.joints) {
            let mid = 0.5 * (j.hi + j.lo);
            let half = (0.5 * (j.hi - j.lo)).max(1e-9);
            o.push((t - mid) / half);
        }
        o
    }

    /// Training reward of a transition.
    pub fn reward(&self, tr: &Transition, kind: RewardKind, time_cost: f64) -> f64 {
        let within = self.model.within_limits(&tr.theta);
        let fea = fea_term(kind, tr.collides, within, tr.man_prime, self.cfg.eps_m);
        let r = self.cfg.goal_radius;
        if tr.d < r {
            drl_reward(fea, tr.d, r)
        } else {
            drl_reward(fea, tr.d, r) - time_cost
        }
    }
}

/// Episode start resolved to a joint configuration.
#[derive(Debug, Clone)]
pub struct Episode {
    pub start: JointVector,
    pub goal: Vec3,
}

/// Resolves pair starts to collision-free IK solutions; starts without one are dropped.
pub fn resolve_episodes(model: &RobotModel, obstacles: &[Obstacle], pairs: &[SegmentPair], seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = IkParams::default();
    let mut out = Vec::new();
    for pr in pairs {
        if let Some(q) = pr.start_q.as_ref().filter(|q| q.len() == model.dof() && !in_collision(model, q, obstacles, 0.0)) {
            out.push(Episode {
                start: q.clone(),
                goal: pr.goal.translation(),
            });
        }
        for attempt in 0..START_ATTEMPTS {
            let from = if attempt == 0 { model.home.clone() } else { model.random_config(&mut rng) };
            let Some(q) = ik(model, &pr.start, &from, &p, &mut rng) else { continue };
            if !in_collision(model, &q, obstacles, 0.0) {
                out.push(Episode {
                    start: q,
                    goal: pr.goal.translation(),
                });
                break;
            }
        }
    }
    out
}

pub struct DrlEnv<'a> {
    pub sim: Simulator<'a>,
    pub episodes: Vec<Episode>,
    pub kind: RewardKind,
    pub time_cost: f64,
    theta: JointVector,
    state: Option<DrlState>,
    goal: Vec3,
    steps: usize,
}

impl<'a> DrlEnv<'a> {
    pub fn new(sim: Simulator<'a>, episodes: Vec<Episode>, kind: RewardKind, time_cost: f64) -> Self {
        let n = sim.model.dof();
        DrlEnv {
            sim,
            episodes,
            kind,
            time_cost,
            theta: vec![0.0; n],
            state: None,
            goal: Vec3::zeros(),
            steps: 0,
        }
    }

    pub fn start(&mut self, ep: &Episode) -> Vec<f64> {
        self.theta = ep.start.clone();
        self.goal = ep.goal;
        self.steps = 0;
        let s = self.sim.state(&self.theta, None);
        let o = self.sim.observe(&s, &self.theta, &self.goal);
        self.state = Some(s);
        o
    }
}

impl Env for DrlEnv<'_> {
    fn obs_dim(&self) -> usize {
        obs_dim(self.sim.model.dof())
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let ep = self.episodes[rng.random_range(0..self.episodes.len())].clone();
        self.start(&ep)
    }

    fn step(&mut self, action: &[f64], _: &mut ChaCha8Rng) -> Step {
        let prev = self.state.take().expect("reset before step");
        let tr = self.sim.step(&self.theta, &prev, action, &self.goal);
        let reward = self.sim.reward(&tr, self.kind, self.time_cost);
        self.steps += 1;
        let terminal = tr.d < self.sim.cfg.goal_radius;
        let truncated = self.steps >= self.sim.cfg.budget;
        let obs = self.sim.observe(&tr.state, &tr.theta, &self.goal);
        self.theta = tr.theta;
        self.state = Some(tr.state);
        Step {
            obs,
            reward,
            terminal,
            truncated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub success_rate: f64,
    pub collision_free_rate: f64,
}

/// Greedy rollouts over the given episodes, scored with `kind` and `time_cost`.
pub fn evaluate(policy: &Policy, sim: &Simulator, episodes: &[Episode], kind: RewardKind, time_cost: f64) -> EvalStats {
    if episodes.is_empty() {
        return EvalStats::default();
    }
    let (mut ret, mut succ, mut clean) = (0.0, 0usize, 0usize);
    for ep in episodes {
        let (plan, r) = rollout_greedy(policy, sim, &ep.start, &ep.goal, (kind, time_cost));
        ret += r;
        succ += usize::from(plan.success);
        clean += usize::from(!plan.collisions.iter().any(|c| *c));
    }
    let n = episodes.len() as f64;
    EvalStats {
        mean_return: ret / n,
        success_rate: succ as f64 / n,
        collision_free_rate: clean as f64 / n,
    }
}

/// traj_DRL with per-waypoint collision flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DrlPlan {
    pub traj: Vec<JointVector>,
    pub collisions: Vec<bool>,
    pub success: bool,
}

/// Greedy rollout; also returns the return under `score`.
fn rollout_greedy(policy: &Policy, sim: &Simulator, start: &[f64], goal: &Vec3, score: (RewardKind, f64)) -> (DrlPlan, f64) {
    let mut theta = start.to_vec();
    let mut state = sim.state(&theta, None);
    let mut traj = vec![theta.clone()];
    let mut collisions = vec![in_collision(sim.model, &theta, sim.obstacles, 0.0)];
    let mut ret = 0.0;
    let mut success = (state.tp - goal).norm() < sim.cfg.goal_radius;
    if !success {
        for _ in 0..sim.cfg.budget {
            let obs = sim.observe(&state, &theta, goal);
            let a = policy.greedy(&obs).unwrap_or_else(|_| vec![0.0; theta.len()]);
            let tr = sim.step(&theta, &state, &a, goal);
            ret += sim.reward(&tr, score.0, score.1);
            traj.push(tr.theta.clone());
            collisions.push(tr.collides && !tr.blocked);
            success = tr.d < sim.cfg.goal_radius;
            theta = tr.theta;
            state = tr.state;
            if success {
                break;
            }
        }
    }
    (DrlPlan { traj, collisions, success }, ret)
}

/// Checks that a checkpoint was trained for this robot's joint count and observation layout.
pub fn check_checkpoint(ckpt: &Checkpoint, model: &RobotModel) -> Result<()> {
    ckpt.require("kind", "drl")?;
    ckpt.require("n", &model.dof().to_string())?;
    ckpt.require("layout", &layout_hash(model.dof()))
}

pub fn plan_drl(ckpt: &Checkpoint, model: &RobotModel, obstacles: &[Obstacle], cfg: &DrlConfig, start: &[f64], goal: &DualQuaternion) -> Result<DrlPlan> {
    check_checkpoint(ckpt, model)?;
    if start.len() != model.dof() {
        return Err(Error::Dimension {
            expected: model.dof(),
            got: start.len(),
        });
    }
    let sim = Simulator { model, obstacles, cfg };
    Ok(rollout_greedy(&ckpt.policy, &sim, start, &goal.translation(), (cfg.reward, cfg.time_cost)).0)
}

#[derive(Debug, Clone)]
pub struct DrlTraining {
    pub checkpoint: Checkpoint,
    pub stats: Vec<StatsRow>,
}

pub fn train_drl(pairs: &[SegmentPair], model: &RobotModel, obstacles: &[Obstacle], cfg: &DrlConfig, seed: u64) -> Result<DrlTraining> {
    if pairs.is_empty() {
        return Err(Error::NoInfeasibleSegments);
    }
    cfg.ppo.validate()?;
    let episodes = resolve_episodes(model, obstacles, pairs, seed);
    if episodes.is_empty() {
        return Err(Error::Config("no segment start admits an IK solution".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dof();
    let mut sizes = vec![obs_dim(n)];
    sizes.extend(&cfg.ppo.hidden);
    let mut vsizes = sizes.clone();
    sizes.push(n);
    vsizes.push(1);
    let policy = Policy::gaussian(&sizes, cfg.ppo.init_log_std, &mut rng);
    let value = Mlp::new(&vsizes, 1.0, &mut rng);
    let mut agent = Agent::new(policy, value, cfg.ppo.learning_rate);

    let sim = Simulator { model, obstacles, cfg };
    let mut env = DrlEnv::new(Simulator { model, obstacles, cfg }, episodes.clone(), cfg.reward, cfg.time_cost);
    let eval_set: Vec<Episode> = (0..cfg.eval_episodes).map(|i| episodes[i % episodes.len()].clone()).collect();
    let mut cursor = Cursor::default();
    let mut stats = Vec::with_capacity(cfg.updates);
    for epoch in 0..cfg.updates {
        let batch = collect_rollout(&mut env, &agent, cfg.ppo.num_steps, &mut cursor, &mut rng)?;
        let s = ppo_update(&mut agent, &batch, &cfg.ppo, &mut rng);
        let eval_reward = (!eval_set.is_empty()).then(|| evaluate(&agent.policy, &sim, &eval_set, RewardKind::Graded, cfg.time_cost).mean_return);
        log::debug!("drl epoch {epoch}: reward {:.3} clip {:.3}", s.mean_reward, s.clip_frac);
        stats.push(StatsRow {
            epoch,
            mean_reward: s.mean_reward,
            clip_frac: s.clip_frac,
            approx_kl: s.approx_kl,
            eval_reward,
        });
    }
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("kind".into(), "drl".into());
    meta.insert("n".into(), n.to_string());
    meta.insert("layout".into(), layout_hash(n));
    meta.insert("robot".into(), model.content_hash().to_string());
    meta.insert("seed".into(), seed.to_string());
    meta.insert("config".into(), serde_json::to_string(cfg)?);
    Ok(DrlTraining {
        checkpoint: Checkpoint {
            meta,
            policy: agent.policy,
            value: agent.value,
        },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{fk, models};

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn reward_examples() {
        assert!(approx(drl_reward(0.7, 0.01, 0.25), 0.1));
        assert!(approx(drl_reward(fea_term(RewardKind::Graded, false, true, 1.0, 0.1), 0.5, 0.25), 0.5));
        assert!(approx(drl_reward(fea_term(RewardKind::Graded, true, true, 1.0, 0.1), 1.0, 0.25), -2.0));
        assert!(approx(fea_term(RewardKind::Binary, false, true, 0.05, 0.1), 0.0));
        assert!(approx(fea_term(RewardKind::DistanceOnly, true, true, 0.9, 0.1), 0.0));
    }

    #[test]
    fn increment_semantics_and_limits() {
        let model = models::planar_2r();
        let cfg = DrlConfig::default();
        let sim = Simulator {
            model: &model,
            obstacles: &[],
            cfg: &cfg,
        };
        let goal = Vec3::new(5.0, 0.0, 0.0);
        let mut theta = vec![170f64.to_radians(), 0.5];
        let mut st = sim.state(&theta, None);
        let tr = sim.step(&theta, &st, &[0.0, 0.0], &goal);
        assert_eq!(tr.theta, theta);
        assert!(tr.state.lv.iter().chain(&tr.state.av).all(|v| v.norm() < 1e-12));
        for k in 0..4 {
            let tr = sim.step(&theta, &st, &[1.0, 0.0], &goal);
            let expect = (170.0 + 5.0 * (k + 1) as f64).min(180.0).to_radians();
            assert!((tr.theta[0] - expect).abs() < 1e-12);
            assert_eq!(tr.clamped, k >= 2);
            theta = tr.theta;
            st = tr.state;
        }
        // Out-of-range commands are clamped to ±1.
        let tr = sim.step(&[0.0, 0.5], &sim.state(&[0.0, 0.5], None), &[0.0, -7.0], &goal);
        assert!((tr.theta[1] - (0.5 - 5f64.to_radians())).abs() < 1e-12);
    }

    #[test]
    fn blocked_motion_keeps_configuration_and_is_penalized() {
        let model = models::desk_3r();
        let cfg = DrlConfig::default();
        let theta = vec![0.0, 0.0, 0.0];
        // A post just counter-clockwise of the stretched arm's tool.
        let obs = [Obstacle::sphere("post", [0.27, 0.03, 0.0], 0.01)];
        let sim = Simulator {
            model: &model,
            obstacles: &obs,
            cfg: &cfg,
        };
        assert!(!in_collision(&model, &theta, &obs, 0.0));
        let goal = Vec3::new(0.0, 0.3, 0.0);
        let st = sim.state(&theta, None);
        let tr = sim.step(&theta, &st, &[1.0, 0.0, 0.0], &goal);
        assert!(tr.collides && tr.blocked);
        assert_eq!(tr.theta, theta);
        assert!(sim.reward(&tr, RewardKind::Graded, 0.0) <= -1.0);
        let free = sim.step(&theta, &st, &[-1.0, 0.0, 0.0], &goal);
        assert!(!free.collides && !free.blocked);
        let unblocked = DrlConfig {
            block_collisions: false,
            ..DrlConfig::default()
        };
        let sim2 = Simulator {
            model: &model,
            obstacles: &obs,
            cfg: &unblocked,
        };
        let through = sim2.step(&theta, &st, &[1.0, 0.0, 0.0], &goal);
        assert!(!through.blocked && through.theta != theta);
    }

    #[test]
    fn state_layout_is_sized_and_finite() {
        let model = models::desk_3r();
        let cfg = DrlConfig::default();
        let obs = [Obstacle::cuboid("w", [0.1, -0.2, -0.05], [0.12, 0.2, 0.05])];
        let sim = Simulator {
            model: &model,
            obstacles: &obs,
            cfg: &cfg,
        };
        let theta = model.home.clone();
        let s = sim.state(&theta, None);
        let o = sim.observe(&s, &theta, &Vec3::new(0.1, 0.1, 0.0));
        assert_eq!(o.len(), obs_dim(3));
        assert!(o.iter().all(|v| v.is_finite()));
        assert!(s.rl.iter().all(|r| *r >= 0.0 && *r <= cfg.ray_range));
        assert_ne!(layout_hash(3), layout_hash(4));
    }

    #[test]
    fn goal_at_start_is_immediate_success() {
        let model = models::desk_3r();
        let cfg = DrlConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = model.dof();
        let policy = Policy::gaussian(&[obs_dim(n), 8, n], -0.5, &mut rng);
        let sim = Simulator {
            model: &model,
            obstacles: &[],
            cfg: &cfg,
        };
        let start = model.home.clone();
        let goal = fk(&model, &start).unwrap().translation();
        let (plan, _) = rollout_greedy(&policy, &sim, &start, &goal, (RewardKind::Graded, 0.0));
        assert!(plan.success);
        assert_eq!(plan.traj.len(), 1);
    }

    #[test]
    fn segment_file_round_trip() {
        let a = DualQuaternion::from_translation(&Vec3::new(0.1, 0.2, 0.0));
        let b = DualQuaternion::from_translation(&Vec3::new(-0.1, 0.25, 0.0));
        let pairs = vec![SegmentPair { start: a, goal: b, start_q: None }];
        let back = parse_segments(&format_segments(&pairs)).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].goal.chordal_distance(&b) < 1e-15);
        assert!(parse_segments("1 0 0 0").is_err());
    }

    #[test]
    fn empty_segment_set_is_rejected() {
        let model = models::desk_3r();
        assert!(matches!(train_drl(&[], &model, &[], &DrlConfig::default(), 0), Err(Error::NoInfeasibleSegments)));
    }

    #[test]
    fn checkpoint_guard_rejects_other_robot() {
        let model = models::desk_3r();
        let mut cfg = DrlConfig::default();
        cfg.updates = 1;
        cfg.ppo.num_steps = 64;
        let a = fk(&model, &model.home).unwrap();
        let b = DualQuaternion::from_translation(&(a.translation() + Vec3::new(0.0, 0.1, 0.0)));
        let out = train_drl(&[SegmentPair { start: a, goal: b, start_q: None }], &model, &[], &cfg, 3).unwrap();
        assert!(check_checkpoint(&out.checkpoint, &model).is_ok());
        let other = models::planar_2r();
        assert!(plan_drl(&out.checkpoint, &other, &[], &cfg, &other.home, &b).is_err());
    }
}
