//! Offline training and online execution of the hybrid planner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::drl::{check_checkpoint, load_segments, plan_drl, save_segments, train_drl, SegmentPair};
use crate::error::{read_to_string, write_bytes, Error, Result};
use crate::feasibility::{build_map, classify_trajectory, infeasible_brackets, FeasibilityMap};
use crate::geometry::Obstacle;
use crate::hrl::{plan_lfd, train_hrl, QTables, Task};
use crate::kinematics::{JointVector, RobotModel};
use crate::lfd::SkillLibrary;
use crate::rl::ppo::write_stats_csv;
use crate::rl::Checkpoint;
use crate::switching::{check_switch_checkpoint, execute_final, track_ik, train_switch, Artifacts, HybridResult};
use crate::workcell::{bench, execute, summarize, BenchResult, ExecReport, Variant, Workcell};

pub const MANIFEST: &str = "manifest.json";
pub const MAP: &str = "map.bin";
pub const TABLES: &str = "hrl_tables.txt";
pub const HRL_RETURNS: &str = "hrl_returns.csv";
pub const SEGMENTS: &str = "segments.txt";
pub const DRL: &str = "drl.ckpt";
pub const DRL_STATS: &str = "drl_stats.csv";
pub const SWITCH: &str = "switch.ckpt";
pub const SWITCH_STATS: &str = "switch_stats.csv";
pub const BASELINE: &str = "drl_only.ckpt";
pub const BASELINE_STATS: &str = "drl_only_stats.csv";
pub const RUN_META: &str = "run_meta.json";

/// Independent seed for pipeline stage `k`.
pub fn stage_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub robot_sha256: String,
    /// File name to sha256 of its content.
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<String>,
    pub skipped: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        Ok(serde_json::from_str(&read_to_string(&p)?)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_bytes(&dir.join(MANIFEST), text.as_bytes())
    }

    fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let p = dir.join(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Reads `name` and checks it against the recorded hash.
    pub fn verified(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let p = dir.join(name);
        let Some(want) = self.artifacts.get(name) else {
            return Err(Error::MissingArtifact(p));
        };
        let bytes = std::fs::read(&p).map_err(|_| Error::MissingArtifact(p.clone()))?;
        if &sha256_hex(&bytes) != want {
            return Err(Error::StaleArtifact { path: p });
        }
        Ok(p)
    }

    /// Checks every recorded artifact.
    pub fn verify_all(&self, dir: &Path) -> Result<()> {
        for name in self.artifacts.keys() {
            self.verified(dir, name)?;
        }
        Ok(())
    }
}

/// Everything the configuration points at, loaded and validated.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub cfg: RunConfig,
    pub workcell: Workcell,
    pub model: RobotModel,
    pub lib: SkillLibrary,
    pub tasks: Vec<Task>,
}

impl Inputs {
    pub fn load(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let wc_path = cfg.workcell_path()?;
        let workcell = Workcell::load(&wc_path)?;
        let model = workcell.robot_model(wc_path.parent())?;
        let lib = SkillLibrary::load_dir(&cfg.library_path()?)?;
        let tasks = Task::load_dir(&cfg.tasks_path()?)?;
        Ok(Inputs {
            cfg,
            workcell,
            model,
            lib,
            tasks,
        })
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Self::load(RunConfig::load(path)?)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.workcell.obstacles
    }

    pub fn eval_tasks(&self) -> Result<Vec<Task>> {
        Task::load_dir(&self.cfg.eval_tasks_path()?)
    }
}

/// Plans every training task and `variants − 1` jittered copies with the
/// trained global planner, keeping the pose pair around each infeasible run.
pub fn harvest_segments(inputs: &Inputs, tables: &QTables, map: &FeasibilityMap, seed: u64) -> Vec<SegmentPair> {
    let (tasks, lib, cfg) = (&inputs.tasks, &inputs.lib, &inputs.cfg);
    let obstacles = inputs.obstacles();
    let h = &cfg.harvest;
    let rot = h.jitter_rot_deg.map(f64::to_radians);
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..h.variants.max(1)).map(move |v| (t, v))).collect();
    let found: Vec<Vec<SegmentPair>> = jobs
        .par_iter()
        .map(|&(t, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((t as u64) << 32) | v as u64);
            let task = if v == 0 { tasks[t].clone() } else { tasks[t].jittered(h.jitter_pos, rot, &mut rng) };
            let Ok(plan) = plan_lfd(&task, lib, tables, &cfg.hrl) else {
                log::warn!("harvest: no plan for {} variant {v}", task.id);
                return Vec::new();
            };
            let Ok(segments) = classify_trajectory(&plan.poses, map) else {
                return Vec::new();
            };
            let brackets = infeasible_brackets(&segments, plan.poses.len());
            let Some(last) = brackets.iter().map(|&(a, _)| a).max() else {
                return Vec::new();
            };
            let (qs, _) = track_ik(&inputs.model, obstacles, map, &plan.poses[..=last], &mut rng);
            brackets
                .into_iter()
                .map(|(a, b)| SegmentPair {
                    start: plan.poses[a],
                    goal: plan.poses[b],
                    start_q: Some(qs[a].clone()),
                })
                .collect()
        })
        .collect();
    found.into_iter().flatten().collect()
}

/// Consecutive critical-configuration pairs of every training task and its
/// jittered variants, started from the tracked configuration.
pub fn task_legs(inputs: &Inputs, map: &FeasibilityMap, seed: u64) -> Vec<SegmentPair> {
    let h = &inputs.cfg.harvest;
    let rot = h.jitter_rot_deg.map(f64::to_radians);
    let tasks = &inputs.tasks;
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..h.variants.max(1)).map(move |v| (t, v))).collect();
    let found: Vec<Vec<SegmentPair>> = jobs
        .par_iter()
        .map(|&(t, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((t as u64) << 32) | v as u64);
            let task = if v == 0 { tasks[t].clone() } else { tasks[t].jittered(h.jitter_pos, rot, &mut rng) };
            let (qs, _) = track_ik(&inputs.model, inputs.obstacles(), map, &task.poses, &mut rng);
            task.poses
                .windows(2)
                .zip(&qs)
                .map(|(w, q)| SegmentPair {
                    start: w[0],
                    goal: w[1],
                    start_q: Some(q.clone()),
                })
                .collect()
        })
        .collect();
    found.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Map,
    Hrl,
    Harvest,
    Drl,
    Switch,
    /// Stand-alone DRL planner trained on whole task legs.
    Baseline,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Map, Stage::Hrl, Stage::Harvest, Stage::Drl, Stage::Switch, Stage::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Map => "map",
            Stage::Hrl => "hrl",
            Stage::Harvest => "harvest",
            Stage::Drl => "drl",
            Stage::Switch => "switch",
            Stage::Baseline => "baseline",
        }
    }
}

fn write_returns(path: &Path, returns: &[f64]) -> Result<()> {
    let mut s = String::from("episode,return\n");
    for (i, r) in returns.iter().enumerate() {
        s.push_str(&format!("{i},{r}\n"));
    }
    write_bytes(path, s.as_bytes())
}

impl Manifest {
    fn fresh(inputs: &Inputs) -> Self {
        Manifest {
            seed: inputs.cfg.seed,
            config_sha256: sha256_hex(inputs.cfg.to_toml().as_bytes()),
            robot_sha256: inputs.model.content_hash().to_string(),
            artifacts: BTreeMap::new(),
            stages: Vec::new(),
            skipped: Vec::new(),
        }
    }

    fn finish(&mut self, dir: &Path, stage: Stage, skipped: bool) -> Result<()> {
        let name = stage.as_str().to_string();
        self.stages.retain(|s| *s != name);
        self.skipped.retain(|s| *s != name);
        if skipped {
            self.skipped.push(name);
        } else {
            self.stages.push(name);
        }
        self.save(dir)
    }
}

/// Upstream artifacts, produced in this run or read back from `out`.
struct Offline<'a> {
    inputs: &'a Inputs,
    out: &'a Path,
    manifest: Manifest,
    map: Option<FeasibilityMap>,
    tables: Option<QTables>,
    pairs: Option<Vec<SegmentPair>>,
    drl: Option<Option<Checkpoint>>,
}

impl Offline<'_> {
    fn map(&mut self) -> Result<&FeasibilityMap> {
        if self.map.is_none() {
            let m = FeasibilityMap::load(&self.manifest.verified(self.out, MAP)?)?;
            m.check_inputs(&self.inputs.model, self.inputs.obstacles())?;
            self.map = Some(m);
        }
        Ok(self.map.as_ref().expect("loaded"))
    }

    fn tables(&mut self) -> Result<&QTables> {
        if self.tables.is_none() {
            self.tables = Some(QTables::load(&self.manifest.verified(self.out, TABLES)?)?);
        }
        Ok(self.tables.as_ref().expect("loaded"))
    }

    fn pairs(&mut self) -> Result<&[SegmentPair]> {
        if self.pairs.is_none() {
            self.pairs = Some(load_segments(&self.manifest.verified(self.out, SEGMENTS)?)?);
        }
        Ok(self.pairs.as_deref().expect("loaded"))
    }

    fn drl(&mut self) -> Result<Option<&Checkpoint>> {
        if self.drl.is_none() {
            let c = if self.manifest.artifacts.contains_key(DRL) {
                let c = Checkpoint::load(&self.manifest.verified(self.out, DRL)?)?;
                check_checkpoint(&c, &self.inputs.model)?;
                Some(c)
            } else if self.manifest.skipped.iter().any(|s| s == Stage::Drl.as_str()) {
                None
            } else {
                return Err(Error::MissingArtifact(self.out.join(DRL)));
            };
            self.drl = Some(c);
        }
        Ok(self.drl.as_ref().expect("loaded").as_ref())
    }

    fn record(&mut self, names: &[&str]) -> Result<()> {
        for n in names {
            self.manifest.record(self.out, n)?;
        }
        Ok(())
    }

    fn run(&mut self, stage: Stage) -> Result<()> {
        let inputs = self.inputs;
        let cfg = &inputs.cfg;
        let out = self.out;
        let obstacles = inputs.obstacles();
        let mut skipped = false;
        match stage {
            Stage::Map => {
                log::info!("map: building");
                let map = build_map(&inputs.model, obstacles, &cfg.map_spec(&inputs.workcell))?;
                map.save(&out.join(MAP))?;
                log::info!("map: {} of {} cells feasible", map.feasible_count(), map.len());
                self.map = Some(map);
                self.record(&[MAP])?;
            }
            Stage::Hrl => {
                log::info!("hrl: training on {} tasks", inputs.tasks.len());
                let (tables, report) = train_hrl(&inputs.tasks, &inputs.lib, &cfg.hrl, stage_seed(cfg.seed, 1))?;
                tables.save(&out.join(TABLES))?;
                write_returns(&out.join(HRL_RETURNS), &report.episode_returns)?;
                self.tables = Some(tables);
                self.record(&[TABLES, HRL_RETURNS])?;
            }
            Stage::Harvest => {
                self.map()?;
                self.tables()?;
                let (map, tables) = (self.map.as_ref().expect("loaded"), self.tables.as_ref().expect("loaded"));
                let pairs = harvest_segments(inputs, tables, map, stage_seed(cfg.seed, 2));
                log::info!("harvest: {} infeasible segments", pairs.len());
                save_segments(&out.join(SEGMENTS), &pairs)?;
                self.pairs = Some(pairs);
                self.record(&[SEGMENTS])?;
            }
            Stage::Drl => {
                let pairs = self.pairs()?;
                if pairs.is_empty() {
                    log::info!("drl: skipped, nothing to bridge");
                    for name in [DRL, DRL_STATS] {
                        self.manifest.artifacts.remove(name);
                    }
                    self.drl = Some(None);
                    skipped = true;
                } else {
                    let t = train_drl(pairs, &inputs.model, obstacles, &cfg.drl, stage_seed(cfg.seed, 3))?;
                    t.checkpoint.save(&out.join(DRL))?;
                    write_stats_csv(&out.join(DRL_STATS), &t.stats)?;
                    self.drl = Some(Some(t.checkpoint));
                    self.record(&[DRL, DRL_STATS])?;
                }
            }
            Stage::Switch => {
                self.map()?;
                self.tables()?;
                self.drl()?;
                let art = Artifacts {
                    model: &inputs.model,
                    obstacles,
                    lib: &inputs.lib,
                    tables: self.tables.as_ref().expect("loaded"),
                    hrl: &cfg.hrl,
                    map: self.map.as_ref().expect("loaded"),
                    drl: self.drl.as_ref().expect("loaded").as_ref(),
                    drl_cfg: &cfg.drl,
                };
                let sw = train_switch(&art, &inputs.tasks, &cfg.switch, stage_seed(cfg.seed, 4))?;
                log::info!("switch: trained on {} band instances", sw.instances);
                sw.checkpoint.save(&out.join(SWITCH))?;
                write_stats_csv(&out.join(SWITCH_STATS), &sw.stats)?;
                self.record(&[SWITCH, SWITCH_STATS])?;
            }
            Stage::Baseline => {
                self.map()?;
                let legs = task_legs(inputs, self.map.as_ref().expect("loaded"), stage_seed(cfg.seed, 5));
                log::info!("baseline: training on {} task legs", legs.len());
                let t = train_drl(&legs, &inputs.model, obstacles, &cfg.drl, stage_seed(cfg.seed, 6))?;
                t.checkpoint.save(&out.join(BASELINE))?;
                write_stats_csv(&out.join(BASELINE_STATS), &t.stats)?;
                self.record(&[BASELINE, BASELINE_STATS])?;
            }
        }
        self.manifest.finish(out, stage, skipped)
    }
}

/// Runs the given stages in order. Upstream artifacts not produced here are
/// read from `out` after checking the existing manifest; a missing manifest
/// or a config change starts a fresh one.
pub fn run_stages(inputs: &Inputs, out: &Path, stages: &[Stage]) -> Result<Manifest> {
    let fresh = Manifest::fresh(inputs);
    let manifest = match Manifest::load(out) {
        Ok(m) if m.config_sha256 == fresh.config_sha256 && m.robot_sha256 == fresh.robot_sha256 => m,
        _ => fresh,
    };
    let mut run = Offline {
        inputs,
        out,
        manifest,
        map: None,
        tables: None,
        pairs: None,
        drl: None,
    };
    let mut meta = serde_json::to_string_pretty(&inputs.cfg.run_meta())?;
    meta.push('\n');
    write_bytes(&out.join(RUN_META), meta.as_bytes())?;
    run.record(&[RUN_META])?;
    for &stage in stages {
        run.run(stage).map_err(|e| e.in_stage(stage.as_str()))?;
    }
    Ok(run.manifest)
}

/// Runs map → hrl → harvest → drl → switch into `out` from scratch, saving
/// the manifest of content hashes after each stage.
pub fn pipeline_offline(inputs: &Inputs, out: &Path) -> Result<Manifest> {
    if out.join(MANIFEST).exists() {
        std::fs::remove_file(out.join(MANIFEST)).map_err(|e| Error::io(out.join(MANIFEST), e))?;
    }
    run_stages(inputs, out, &Stage::ALL)
}

/// Artifacts loaded from an offline run after hash verification.
#[derive(Debug, Clone)]
pub struct Trained {
    pub manifest: Manifest,
    pub map: FeasibilityMap,
    pub tables: QTables,
    pub drl: Option<Checkpoint>,
    pub switch: Checkpoint,
    /// DRL_ONLY planner, when the baseline stage ran.
    pub baseline: Option<Checkpoint>,
}

impl Trained {
    /// Verifies the manifest, then loads and checks each artifact against the inputs.
    pub fn load(dir: &Path, inputs: &Inputs) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        manifest.verify_all(dir)?;
        let map = FeasibilityMap::load(&manifest.verified(dir, MAP)?)?;
        map.check_inputs(&inputs.model, inputs.obstacles())?;
        let tables = QTables::load(&manifest.verified(dir, TABLES)?)?;
        let drl = if manifest.artifacts.contains_key(DRL) {
            let c = Checkpoint::load(&manifest.verified(dir, DRL)?)?;
            check_checkpoint(&c, &inputs.model)?;
            Some(c)
        } else {
            None
        };
        let switch = Checkpoint::load(&manifest.verified(dir, SWITCH)?)?;
        check_switch_checkpoint(&switch, &inputs.model, inputs.cfg.switch.window)?;
        let baseline = if manifest.artifacts.contains_key(BASELINE) {
            let c = Checkpoint::load(&manifest.verified(dir, BASELINE)?)?;
            check_checkpoint(&c, &inputs.model)?;
            Some(c)
        } else {
            None
        };
        Ok(Trained {
            manifest,
            map,
            tables,
            drl,
            switch,
            baseline,
        })
    }

    pub fn artifacts<'a>(&'a self, inputs: &'a Inputs) -> Artifacts<'a> {
        Artifacts {
            model: &inputs.model,
            obstacles: inputs.obstacles(),
            lib: &inputs.lib,
            tables: &self.tables,
            hrl: &inputs.cfg.hrl,
            map: &self.map,
            drl: self.drl.as_ref(),
            drl_cfg: &inputs.cfg.drl,
        }
    }

    /// Harvested segment pairs, if the offline run kept them.
    pub fn segments(&self, dir: &Path) -> Result<Vec<SegmentPair>> {
        load_segments(&self.manifest.verified(dir, SEGMENTS)?)
    }
}

#[derive(Debug, Clone)]
pub struct Online {
    pub result: HybridResult,
    pub verdict: ExecReport,
}

/// Plans `task` with the full hybrid flow and replays the result in the workcell.
pub fn pipeline_online(inputs: &Inputs, trained: &Trained, task: &Task, seed: u64) -> Result<Online> {
    let art = trained.artifacts(inputs);
    let result = execute_final(&art, &trained.switch, task, &inputs.cfg.switch, seed)?;
    let verdict = execute(&result.traj_final, &inputs.model, inputs.obstacles(), &inputs.cfg.bench.criteria, task);
    Ok(Online { result, verdict })
}

/// Joint trajectory produced by one benchmark variant.
pub fn plan_variant(variant: Variant, inputs: &Inputs, trained: &Trained, task: &Task, rng: &mut ChaCha8Rng) -> Result<Vec<JointVector>> {
    let art = trained.artifacts(inputs);
    match variant {
        Variant::Hybrid => Ok(execute_final(&art, &trained.switch, task, &inputs.cfg.switch, rng.random())?.traj_final),
        Variant::LfdOnly => {
            let plan = plan_lfd(task, art.lib, art.tables, art.hrl).map_err(|e| e.in_stage("plan_lfd"))?;
            Ok(track_ik(art.model, art.obstacles, art.map, &plan.poses, rng).0)
        }
        Variant::DrlOnly => {
            let ckpt = trained.baseline.as_ref().ok_or_else(|| Error::MissingArtifact(BASELINE.into()))?;
            let (start, _) = track_ik(art.model, art.obstacles, art.map, &task.poses[..1], rng);
            let mut traj = start;
            for goal in &task.poses[1..] {
                let from = traj.last().expect("non-empty").clone();
                let leg = plan_drl(ckpt, art.model, art.obstacles, art.drl_cfg, &from, goal).map_err(|e| e.in_stage("plan_drl"))?;
                traj.extend(leg.traj.into_iter().skip(1));
            }
            Ok(traj)
        }
    }
}

/// Benchmarks each variant on `tasks` with the configured trial count.
pub fn run_bench(inputs: &Inputs, trained: &Trained, variants: &[Variant], tasks: &[Task], seed: u64) -> BenchResult {
    let mut rows = Vec::new();
    for &v in variants {
        log::info!("bench: {}", v.as_str());
        let r = bench(v, tasks, &inputs.model, inputs.obstacles(), &inputs.cfg.bench, seed, |task, rng| {
            plan_variant(v, inputs, trained, task, rng)
        });
        rows.extend(r.rows);
    }
    let summary = summarize(&rows);
    BenchResult { rows, summary }
}
