//! Global planner: two-level Q-learning that segments a task's critical
//! configurations and picks a demonstrated skill for every segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualquat::{DualQuaternion, Quaternion, Vec3};
use crate::error::{read_to_string, write_bytes, Error, Result};
use crate::lfd::{arc_fractions, extract_features, feature_terms, retarget, sample_at, Demonstration, SkillLibrary, DEFAULT_DELTA_BETA, FEATURE_SAMPLES};
use crate::rl::{Adam, Mlp};

/// Stand-in for an inadmissible (−∞) reward.
pub const SENTINEL: f64 = -1e9;

pub fn is_sentinel(v: f64) -> bool {
    v <= SENTINEL
}

/// Ordered critical configurations the end effector must attain.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub poses: Vec<DualQuaternion>,
    /// `hold[i]`: a payload is carried from config `i` to config `i + 1`.
    pub hold: Vec<bool>,
}

impl Task {
    pub fn new(id: &str, poses: Vec<DualQuaternion>, hold: Vec<bool>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::TrajectoryTooShort { min: 2, got: poses.len() });
        }
        if hold.len() != poses.len() {
            return Err(Error::Dimension { expected: poses.len(), got: hold.len() });
        }
        Ok(Task {
            id: id.to_string(),
            poses,
            hold,
        })
    }

    /// `@task id=<id>` followed by one pose per line, optionally suffixed `hold`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::parse("task", "empty file"))?;
        let rest = header
            .strip_prefix("@task")
            .ok_or_else(|| Error::parse("task", "missing '@task' header line"))?;
        let mut id = None;
        for tok in rest.split_whitespace() {
            match tok.strip_prefix("id=") {
                Some(v) => id = Some(v.to_string()),
                None => return Err(Error::parse("task", format!("unknown header field {tok:?}"))),
            }
        }
        let id = id.ok_or_else(|| Error::parse("task", "header lacks id="))?;
        let (mut poses, mut hold) = (Vec::new(), Vec::new());
        for line in lines {
            let (body, h) = match line.strip_suffix("hold") {
                Some(b) => (b, true),
                None => (line, false),
            };
            poses.push(DualQuaternion::parse(body)?);
            hold.push(h);
        }
        Task::new(&id, poses, hold)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("@task id={}\n", self.id);
        for (p, h) in self.poses.iter().zip(&self.hold) {
            let _ = writeln!(s, "{p}{}", if *h { " hold" } else { "" });
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }

    /// Loads every `*.task` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Task>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "task"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Task::load(p)).collect()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Independent uniform perturbation of every configuration.
    pub fn jittered<R: Rng + ?Sized>(&self, pos: [f64; 3], rot: [f64; 3], rng: &mut R) -> Task {
        let mut sym = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        let poses = self
            .poses
            .iter()
            .map(|p| {
                let dp = Vec3::new(sym(pos[0]), sym(pos[1]), sym(pos[2]));
                let dr = Quaternion::from_euler(sym(rot[0]), sym(rot[1]), sym(rot[2]));
                DualQuaternion::from_rotation_translation(p.real * dr, &(p.translation() + dp))
            })
            .collect();
        Task {
            id: self.id.clone(),
            poses,
            hold: self.hold.clone(),
        }
    }
}

/// Admissible segments from the current frontier: `(c, k)` for every `k > c`.
pub fn segment_candidates(frontier: usize, n_configs: usize) -> Vec<(usize, usize)> {
    (frontier + 1..n_configs).map(|k| (frontier, k)).collect()
}

/// Skill poses sampled at the given path fractions.
fn skill_at(skill: &Demonstration, fractions: &[f64]) -> Vec<DualQuaternion> {
    let params = arc_fractions(&skill.poses);
    fractions.iter().map(|u| sample_at(&skill.poses, &params, *u)).collect()
}

/// Negated feature distance between a skill and a segment, or [`SENTINEL`]
/// when any compared term exceeds `delta_beta`.
pub fn intrinsic_reward(skill: &Demonstration, segment: &[DualQuaternion], delta_beta: f64) -> f64 {
    if segment.len() < 2 {
        return SENTINEL;
    }
    let fr = arc_fractions(segment);
    let sampled = skill_at(skill, &fr);
    let (Ok(fs), Ok(ft)) = (extract_features(&sampled), extract_features(segment)) else {
        return SENTINEL;
    };
    let terms = feature_terms(&fs, &ft);
    if terms.iter().any(|t| !(*t <= delta_beta)) {
        return SENTINEL;
    }
    -terms.iter().sum::<f64>()
}

/// Running sum that absorbs the sentinel.
pub fn extrinsic_reward(history: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in history {
        if is_sentinel(*r) {
            return SENTINEL;
        }
        acc += r;
    }
    acc
}

fn add_rewards(a: f64, b: f64) -> f64 {
    if is_sentinel(a) || is_sentinel(b) {
        SENTINEL
    } else {
        a + b
    }
}

/// Realizes `skill` across the segment's configurations: the skill is split at
/// the configurations' path fractions and each leg retargeted, so every
/// configuration is hit exactly.
pub fn realize_segment(skill: &Demonstration, segment: &[DualQuaternion], points_per_leg: usize) -> Result<Vec<DualQuaternion>> {
    if segment.len() < 2 {
        return Err(Error::TrajectoryTooShort { min: 2, got: segment.len() });
    }
    if segment.len() == 2 {
        return retarget(skill, &segment[0], &segment[1], points_per_leg);
    }
    let fr = arc_fractions(segment);
    let sp = arc_fractions(&skill.poses);
    let mut out: Vec<DualQuaternion> = Vec::new();
    for j in 0..segment.len() - 1 {
        let (u0, u1) = (fr[j], fr[j + 1]);
        let mut leg = vec![sample_at(&skill.poses, &sp, u0)];
        leg.extend(
            skill
                .poses
                .iter()
                .zip(&sp)
                .filter(|(_, u)| **u > u0 && **u < u1)
                .map(|(p, _)| *p),
        );
        leg.push(sample_at(&skill.poses, &sp, u1));
        let piece = Demonstration::new(&skill.id, Vec::new(), leg)?;
        let path = retarget(&piece, &segment[j], &segment[j + 1], points_per_leg)?;
        let skip = usize::from(!out.is_empty());
        out.extend_from_slice(&path[skip..]);
    }
    Ok(out)
}

/// Discretized `⟨EE_t, ta_t⟩`: the frontier index plus quantized end-effector
/// pose and remaining configurations relative to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub frontier: u32,
    pub coords: Vec<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyGrid {
    /// Position cell size, meters.
    pub pos: f64,
    /// Rotation cell size, radians.
    pub rot: f64,
}

impl Default for KeyGrid {
    fn default() -> Self {
        KeyGrid {
            pos: 0.02,
            rot: 5f64.to_radians(),
        }
    }
}

impl KeyGrid {
    fn q(v: f64, h: f64) -> i32 {
        (v / h).floor() as i32
    }

    pub fn key(&self, configs: &[DualQuaternion], frontier: usize, ee: &DualQuaternion) -> StateKey {
        let mut coords = Vec::with_capacity(6 * (configs.len() - frontier));
        let push_pose = |coords: &mut Vec<i32>, p: Vec3, r: Vec3| {
            coords.extend(p.iter().map(|v| Self::q(*v, self.pos)));
            coords.extend(r.iter().map(|v| Self::q(*v, self.rot)));
        };
        push_pose(&mut coords, ee.translation(), ee.real.log_vector());
        let inv = ee.conjugate();
        for c in &configs[frontier + 1..] {
            let rel = inv * *c;
            push_pose(&mut coords, rel.translation(), rel.real.log_vector());
        }
        StateKey {
            frontier: frontier as u32,
            coords,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub value: f64,
    pub visits: u64,
}

type Seg = (u32, u32);

/// Task-controller `Q(s, ts)` and motion-controller `q(s, ts, HD)` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    pub grid: KeyGrid,
    pub task_q: BTreeMap<(StateKey, Seg), Entry>,
    pub motion_q: BTreeMap<(StateKey, Seg, String), Entry>,
}

fn seg(c: usize, k: usize) -> Seg {
    (c as u32, k as u32)
}

impl QTables {
    pub fn new(grid: KeyGrid) -> Self {
        QTables {
            grid,
            task_q: BTreeMap::new(),
            motion_q: BTreeMap::new(),
        }
    }

    pub fn states(&self) -> BTreeSet<&StateKey> {
        self.task_q.keys().map(|(k, _)| k).collect()
    }

    /// The exact key when visited, else the nearest visited key (L1 over
    /// coordinates) with the same frontier and horizon.
    pub fn resolve<'a>(&'a self, key: &'a StateKey) -> Option<&'a StateKey> {
        if self.task_q.range((key.clone(), (0, 0))..).next().is_some_and(|((k, _), _)| k == key) {
            return Some(key);
        }
        let mut best: Option<(&StateKey, i64)> = None;
        for k in self.states() {
            if k.frontier != key.frontier || k.coords.len() != key.coords.len() {
                continue;
            }
            let d: i64 = k.coords.iter().zip(&key.coords).map(|(a, b)| (*a as i64 - *b as i64).abs()).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }

    fn task_value(&self, key: &StateKey, s: Seg) -> Option<f64> {
        self.task_q.get(&(key.clone(), s)).map(|e| e.value)
    }

    fn motion_value(&self, key: &StateKey, s: Seg, skill: &str) -> Option<f64> {
        self.motion_q.get(&(key.clone(), s, skill.to_string())).map(|e| e.value)
    }

    /// Best admissible skill value for a segment, sentinel when all are inadmissible.
    fn best_motion(&self, key: &StateKey, s: Seg, lib: &SkillLibrary) -> Option<f64> {
        let vals: Vec<f64> = lib
            .skills()
            .iter()
            .filter_map(|sk| self.motion_value(key, s, &sk.id))
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().cloned().filter(|v| !is_sentinel(*v)).fold(SENTINEL, f64::max))
    }

    /// Value of a state: best admissible segment value. Unvisited candidates
    /// count as 0, an upper bound on any reward.
    fn state_value(&self, key: &StateKey, cands: &[(usize, usize)]) -> f64 {
        let mut best = SENTINEL;
        for (c, k) in cands {
            match self.task_value(key, seg(*c, *k)) {
                None => return 0.0,
                Some(v) if !is_sentinel(v) => best = best.max(v),
                Some(_) => {}
            }
        }
        best
    }

    /// Positive affine map of every admissible value.
    pub fn affine(&self, scale: f64, shift: f64) -> QTables {
        let f = |e: &Entry| Entry {
            value: if is_sentinel(e.value) { e.value } else { e.value * scale + shift },
            visits: e.visits,
        };
        QTables {
            grid: self.grid,
            task_q: self.task_q.iter().map(|(k, e)| (k.clone(), f(e))).collect(),
            motion_q: self.motion_q.iter().map(|(k, e)| (k.clone(), f(e))).collect(),
        }
    }

    fn key_text(k: &StateKey) -> String {
        let coords: Vec<String> = k.coords.iter().map(i32::to_string).collect();
        format!("{} {}", k.frontier, if coords.is_empty() { "-".to_string() } else { coords.join(",") })
    }

    /// Sorted line-oriented text: `Q <frontier> <coords> <c> <k> <value> <visits>`
    /// and `q <frontier> <coords> <c> <k> <skill> <value> <visits>`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# hrl tables\ngrid {} {}\n", self.grid.pos, self.grid.rot);
        for ((k, (c, e)), v) in &self.task_q {
            let _ = writeln!(s, "Q {} {c} {e} {} {}", Self::key_text(k), v.value, v.visits);
        }
        for ((k, (c, e), sk), v) in &self.motion_q {
            let _ = writeln!(s, "q {} {c} {e} {sk} {} {}", Self::key_text(k), v.value, v.visits);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |l: usize, m: &str| Error::parse(format!("hrl tables line {}", l + 1), m.to_string());
        let mut t = QTables::new(KeyGrid::default());
        let mut grid_seen = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> { tok.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err(ln, "bad number")) };
            let int = |i: usize| -> Result<u64> { tok.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| err(ln, "bad integer")) };
            let key = |i: usize| -> Result<StateKey> {
                let frontier = int(i)? as u32;
                let raw = tok.get(i + 1).ok_or_else(|| err(ln, "missing coordinates"))?;
                let coords = if *raw == "-" {
                    Vec::new()
                } else {
                    raw.split(',').map(|c| c.parse().map_err(|_| err(ln, "bad coordinate"))).collect::<Result<_>>()?
                };
                Ok(StateKey { frontier, coords })
            };
            match tok[0] {
                "grid" if tok.len() == 3 => {
                    t.grid = KeyGrid { pos: num(1)?, rot: num(2)? };
                    grid_seen = true;
                }
                "Q" if tok.len() == 7 => {
                    let k = key(1)?;
                    t.task_q.insert((k, (int(3)? as u32, int(4)? as u32)), Entry { value: num(5)?, visits: int(6)? });
                }
                "q" if tok.len() == 8 => {
                    let k = key(1)?;
                    t.motion_q.insert(
                        (k, (int(3)? as u32, int(4)? as u32), tok[5].to_string()),
                        Entry { value: num(6)?, visits: int(7)? },
                    );
                }
                _ => return Err(err(ln, "unrecognized record")),
            }
        }
        if !grid_seen {
            return Err(Error::parse("hrl tables", "missing grid line"));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            batch_size: 256,
            gamma: 0.92,
            learning_rate: 1e-4,
            tau: 0.005,
            replay_capacity: 10_000,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrlMode {
    Tabular,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrlConfig {
    pub mode: HrlMode,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// e-folding length of the exploration schedule, in decisions.
    pub epsilon_decay: f64,
    /// Task-controller step size.
    pub alpha: f64,
    /// Task-controller discount in tabular mode.
    pub gamma: f64,
    pub delta_beta: f64,
    pub jitter_pos: [f64; 3],
    pub jitter_rot_deg: [f64; 3],
    pub grid: KeyGrid,
    pub points_per_leg: usize,
    pub dqn: DqnConfig,
}

impl Default for HrlConfig {
    fn default() -> Self {
        HrlConfig {
            mode: HrlMode::Tabular,
            episodes: 1000,
            epsilon_start: 0.95,
            epsilon_end: 0.05,
            epsilon_decay: 2000.0,
            alpha: 0.5,
            gamma: 1.0,
            delta_beta: DEFAULT_DELTA_BETA,
            jitter_pos: [0.02; 3],
            jitter_rot_deg: [5.0; 3],
            grid: KeyGrid::default(),
            points_per_leg: 20,
            dqn: DqnConfig::default(),
        }
    }
}

impl HrlConfig {
    pub fn epsilon(&self, step: usize) -> f64 {
        self.epsilon_end + (self.epsilon_start - self.epsilon_end) * (-(step as f64) / self.epsilon_decay.max(1e-9)).exp()
    }

    fn jitter(&self) -> ([f64; 3], [f64; 3]) {
        (self.jitter_pos, self.jitter_rot_deg.map(f64::to_radians))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Extrinsic return per episode.
    pub episode_returns: Vec<f64>,
    pub decisions: usize,
}

fn argmax_by<T: Copy>(items: &[T], mut val: impl FnMut(T) -> f64) -> Option<T> {
    let mut best: Option<(T, f64)> = None;
    for it in items {
        let v = val(*it);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((*it, v));
        }
    }
    best.map(|(t, _)| t)
}

pub fn train_hrl(tasks: &[Task], lib: &SkillLibrary, cfg: &HrlConfig, seed: u64) -> Result<(QTables, TrainReport)> {
    if tasks.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    if lib.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    match cfg.mode {
        HrlMode::Tabular => train_tabular(tasks, lib, cfg, seed),
        HrlMode::Dqn => train_dqn(tasks, lib, cfg, seed),
    }
}

fn sample_task<R: Rng>(tasks: &[Task], cfg: &HrlConfig, rng: &mut R) -> Task {
    let t = &tasks[rng.random_range(0..tasks.len())];
    let (jp, jr) = cfg.jitter();
    t.jittered(jp, jr, rng)
}

fn train_tabular(tasks: &[Task], lib: &SkillLibrary, cfg: &HrlConfig, seed: u64) -> Result<(QTables, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = QTables::new(cfg.grid);
    let mut report = TrainReport::default();
    let n_skills = lib.len();
    for _ in 0..cfg.episodes {
        let task = sample_task(tasks, cfg, &mut rng);
        let m = task.len();
        let mut frontier = 0;
        let mut history = Vec::new();
        while frontier + 1 < m {
            let key = cfg.grid.key(&task.poses, frontier, &task.poses[frontier]);
            let cands = segment_candidates(frontier, m);
            let eps = cfg.epsilon(report.decisions);
            report.decisions += 1;
            let (c, k) = if rng.random::<f64>() < eps {
                cands[rng.random_range(0..cands.len())]
            } else {
                argmax_by(&cands, |(c, k)| t.task_value(&key, seg(c, k)).unwrap_or(0.0)).expect("nonempty")
            };
            let s = seg(c, k);
            let skill_idx: Vec<usize> = (0..n_skills).collect();
            let l = if rng.random::<f64>() < eps {
                rng.random_range(0..n_skills)
            } else {
                argmax_by(&skill_idx, |l| t.motion_value(&key, s, &lib.skills()[l].id).unwrap_or(0.0)).expect("nonempty")
            };
            let skill = &lib.skills()[l];
            let r = intrinsic_reward(skill, &task.poses[c..=k], cfg.delta_beta);
            history.push(r);

            let e = t
                .motion_q
                .entry((key.clone(), s, skill.id.clone()))
                .or_insert(Entry { value: 0.0, visits: 0 });
            e.visits += 1;
            e.value += (r - e.value) / e.visits as f64;

            let next = if k + 1 < m {
                let nk = cfg.grid.key(&task.poses, k, &task.poses[k]);
                let v = t.state_value(&nk, &segment_candidates(k, m));
                if is_sentinel(v) {
                    SENTINEL
                } else {
                    cfg.gamma * v
                }
            } else {
                0.0
            };
            let best = t.best_motion(&key, s, lib).expect("just visited");
            let target = add_rewards(best, next);
            let e = t.task_q.entry((key, s)).or_insert(Entry { value: target, visits: 0 });
            e.value = if e.visits == 0 { target } else { e.value + cfg.alpha * (target - e.value) };
            if is_sentinel(e.value) || is_sentinel(target) {
                e.value = if is_sentinel(target) { SENTINEL } else { e.value.max(SENTINEL) };
            }
            e.visits += 1;
            frontier = k;
        }
        report.episode_returns.push(extrinsic_reward(&history));
    }
    Ok((t, report))
}

/// One greedy decision of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub from: usize,
    pub to: usize,
    pub skill: String,
    /// Intrinsic reward of the choice.
    pub reward: f64,
}

/// traj_LfD plus the decisions behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct LfdPlan {
    pub poses: Vec<DualQuaternion>,
    pub steps: Vec<PlanStep>,
    /// Index into `poses` at which each critical configuration is attained.
    pub config_indices: Vec<usize>,
}

impl LfdPlan {
    pub fn total_reward(&self) -> f64 {
        extrinsic_reward(&self.steps.iter().map(|s| s.reward).collect::<Vec<_>>())
    }
}

/// Greedy segment and skill choices from the tables, without realization.
pub fn greedy_choices(task: &Task, lib: &SkillLibrary, tables: &QTables, delta_beta: f64) -> Result<Vec<PlanStep>> {
    let m = task.len();
    let mut frontier = 0;
    let mut steps = Vec::new();
    while frontier + 1 < m {
        let raw = tables.grid.key(&task.poses, frontier, &task.poses[frontier]);
        let key = tables.resolve(&raw).ok_or(Error::NoAdmissibleSkill { from: frontier, to: m - 1 })?;
        let cands = segment_candidates(frontier, m);
        let admissible: Vec<(usize, usize)> = cands
            .iter()
            .copied()
            .filter(|(c, k)| tables.task_value(key, seg(*c, *k)).is_some_and(|v| !is_sentinel(v)))
            .collect();
        let (c, k) = argmax_by(&admissible, |(c, k)| tables.task_value(key, seg(c, k)).unwrap_or(SENTINEL))
            .ok_or(Error::NoAdmissibleSkill { from: frontier, to: m - 1 })?;
        let s = seg(c, k);
        let skills: Vec<usize> = (0..lib.len())
            .filter(|l| tables.motion_value(key, s, &lib.skills()[*l].id).is_some_and(|v| !is_sentinel(v)))
            .collect();
        let l = argmax_by(&skills, |l| tables.motion_value(key, s, &lib.skills()[l].id).unwrap_or(SENTINEL))
            .ok_or(Error::NoAdmissibleSkill { from: c, to: k })?;
        let skill = &lib.skills()[l];
        steps.push(PlanStep {
            from: c,
            to: k,
            skill: skill.id.clone(),
            reward: intrinsic_reward(skill, &task.poses[c..=k], delta_beta),
        });
        frontier = k;
    }
    Ok(steps)
}

/// Realizes a sequence of segment/skill choices into one pose sequence.
pub fn realize_plan(task: &Task, lib: &SkillLibrary, steps: Vec<PlanStep>, points_per_leg: usize) -> Result<LfdPlan> {
    let mut poses: Vec<DualQuaternion> = vec![task.poses[0]];
    let mut config_indices = vec![0];
    for st in &steps {
        let skill = lib.get(&st.skill).ok_or_else(|| Error::parse("plan", format!("unknown skill {}", st.skill)))?;
        let seg_poses = &task.poses[st.from..=st.to];
        let path = realize_segment(skill, seg_poses, points_per_leg)?;
        let base = poses.len() - 1;
        let legs = st.to - st.from;
        let per = (path.len() - 1) / legs;
        for j in 1..=legs {
            config_indices.push(base + j * per);
        }
        poses.extend_from_slice(&path[1..]);
    }
    for (i, ci) in config_indices.iter().enumerate() {
        poses[*ci] = task.poses[i];
    }
    Ok(LfdPlan {
        poses,
        steps,
        config_indices,
    })
}

/// Greedy online planning: traj_LfD for `task`.
pub fn plan_lfd(task: &Task, lib: &SkillLibrary, tables: &QTables, cfg: &HrlConfig) -> Result<LfdPlan> {
    let steps = greedy_choices(task, lib, tables, cfg.delta_beta)?;
    realize_plan(task, lib, steps, cfg.points_per_leg)
}

/// Brute force over every segmentation and skill assignment; returns the
/// best total reward and its choices (sentinel and empty when none is admissible).
pub fn exhaustive_best(task: &Task, lib: &SkillLibrary, delta_beta: f64) -> (f64, Vec<PlanStep>) {
    let m = task.len();
    // best[c]: optimal value from configuration c to the end.
    let mut best: Vec<(f64, Vec<PlanStep>)> = vec![(SENTINEL, Vec::new()); m];
    best[m - 1] = (0.0, Vec::new());
    for c in (0..m - 1).rev() {
        for k in c + 1..m {
            if is_sentinel(best[k].0) {
                continue;
            }
            for sk in lib.skills() {
                let r = intrinsic_reward(sk, &task.poses[c..=k], delta_beta);
                if is_sentinel(r) {
                    continue;
                }
                let v = r + best[k].0;
                if v > best[c].0 {
                    let mut steps = vec![PlanStep {
                        from: c,
                        to: k,
                        skill: sk.id.clone(),
                        reward: r,
                    }];
                    steps.extend(best[k].1.iter().cloned());
                    best[c] = (v, steps);
                }
            }
        }
    }
    best.swap_remove(0)
}

/// Input encoding of `(s, ts, HD)` for the value network.
fn dqn_features(task: &Task, frontier: usize, k: usize, l: usize, n_skills: usize) -> Vec<f64> {
    let m = (task.len() - 1).max(1) as f64;
    let ee = task.poses[frontier];
    let inv = ee.conjugate();
    let mut f = vec![frontier as f64 / m, (k - frontier) as f64 / m, (task.len() - 1 - frontier) as f64 / m];
    f.extend(ee.translation().iter());
    for j in frontier + 1..=k {
        let rel = inv * task.poses[j];
        if j == k || j == frontier + 1 {
            f.extend(rel.translation().iter().map(|v| v * 5.0));
            f.extend(rel.real.log_vector().iter());
        }
    }
    if k == frontier + 1 {
        f.extend([0.0; 6]);
    }
    f.extend((0..n_skills).map(|i| if i == l { 1.0 } else { 0.0 }));
    f
}

struct Transition {
    x: Vec<f64>,
    r: f64,
    /// Feature rows of every next action; empty when terminal.
    next: Vec<Vec<f64>>,
}

fn train_dqn(tasks: &[Task], lib: &SkillLibrary, cfg: &HrlConfig, seed: u64) -> Result<(QTables, TrainReport)> {
    let d = &cfg.dqn;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_skills = lib.len();
    let in_dim = dqn_features(&tasks[0], 0, 1, 0, n_skills).len();
    let mut sizes = vec![in_dim];
    sizes.extend(&d.hidden);
    sizes.push(1);
    let mut online = Mlp::new(&sizes, 1.0, &mut rng);
    let mut target = online.clone();
    let mut opt = Adam::new(online.num_params(), d.learning_rate);
    // Rewards scaled so an admissible segment lies in [-1, 0].
    let scale = FEATURE_SAMPLES as f64 * cfg.delta_beta;
    let clip = -1.0 - 1.0 / FEATURE_SAMPLES as f64;
    let mut replay: Vec<Transition> = Vec::new();
    let mut cursor = 0;
    let mut report = TrainReport::default();
    let mut visited: BTreeMap<StateKey, (Task, usize)> = BTreeMap::new();
    let q = |net: &Mlp, x: &[f64]| net.forward(x).map(|v| v[0]).unwrap_or(0.0);

    for _ in 0..cfg.episodes {
        let task = sample_task(tasks, cfg, &mut rng);
        let m = task.len();
        let mut frontier = 0;
        let mut history = Vec::new();
        while frontier + 1 < m {
            visited
                .entry(cfg.grid.key(&task.poses, frontier, &task.poses[frontier]))
                .or_insert_with(|| (task.clone(), frontier));
            let actions: Vec<(usize, usize)> = segment_candidates(frontier, m)
                .into_iter()
                .flat_map(|(_, k)| (0..n_skills).map(move |l| (k, l)))
                .collect();
            let eps = cfg.epsilon(report.decisions);
            report.decisions += 1;
            let (k, l) = if rng.random::<f64>() < eps {
                actions[rng.random_range(0..actions.len())]
            } else {
                argmax_by(&actions, |(k, l)| q(&online, &dqn_features(&task, frontier, k, l, n_skills))).expect("nonempty")
            };
            let r = intrinsic_reward(&lib.skills()[l], &task.poses[frontier..=k], cfg.delta_beta);
            history.push(r);
            let next = if k + 1 < m {
                segment_candidates(k, m)
                    .into_iter()
                    .flat_map(|(_, k2)| (0..n_skills).map(move |l2| (k2, l2)))
                    .map(|(k2, l2)| dqn_features(&task, k, k2, l2, n_skills))
                    .collect()
            } else {
                Vec::new()
            };
            let tr = Transition {
                x: dqn_features(&task, frontier, k, l, n_skills),
                r: if is_sentinel(r) { clip } else { r / scale },
                next,
            };
            if replay.len() < d.replay_capacity {
                replay.push(tr);
            } else {
                replay[cursor] = tr;
                cursor = (cursor + 1) % d.replay_capacity;
            }
            if replay.len() >= d.batch_size.min(64) {
                let bs = d.batch_size.min(replay.len());
                let mut grads = vec![0.0; online.num_params()];
                for _ in 0..bs {
                    let t = &replay[rng.random_range(0..replay.len())];
                    let boot = t.next.iter().map(|x| q(&target, x)).fold(f64::NEG_INFINITY, f64::max);
                    let y = t.r + if t.next.is_empty() { 0.0 } else { d.gamma * boot };
                    let c = online.forward_cached(&t.x)?;
                    let err = c.output()[0] - y;
                    online.backward(&c, &[2.0 * err / bs as f64], &mut grads);
                }
                opt.step(online.params_mut(), &grads);
                for (tp, op) in target.params_mut().iter_mut().zip(online.params()) {
                    *tp += d.tau * (op - *tp);
                }
            }
            frontier = k;
        }
        report.episode_returns.push(extrinsic_reward(&history));
    }

    // Distill the network into tables over every visited state.
    let mut t = QTables::new(cfg.grid);
    for (key, (task, c)) in &visited {
        let c = *c;
        for (_, k) in segment_candidates(c, task.len()) {
            let s = seg(c, k);
            let mut best = SENTINEL;
            for (l, sk) in lib.skills().iter().enumerate() {
                let admissible = !is_sentinel(intrinsic_reward(sk, &task.poses[c..=k], cfg.delta_beta));
                let v = if admissible { q(&online, &dqn_features(task, c, k, l, n_skills)) * scale } else { SENTINEL };
                best = best.max(v);
                t.motion_q.insert((key.clone(), s, sk.id.clone()), Entry { value: v, visits: 1 });
            }
            t.task_q.insert((key.clone(), s), Entry { value: best, visits: 1 });
        }
    }
    Ok((t, report))
}
