//! Run configuration: one TOML file with per-module blocks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::drl::DrlConfig;
use crate::error::{read_to_string, Error, Result};
use crate::feasibility::{MapSpec, OrientationSpec};
use crate::hrl::{DqnConfig, HrlConfig};
use crate::kinematics::IkParams;
use crate::rl::ppo::PpoConfig;
use crate::switching::SwitchConfig;
use crate::workcell::{BenchConfig, Workcell};

/// File references, relative to the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub workcell: Option<PathBuf>,
    /// Directory of `.demo` files.
    pub library: Option<PathBuf>,
    /// Directory of `.task` files used for training.
    pub tasks: Option<PathBuf>,
    /// Held-out tasks for online runs and benchmarks; defaults to `tasks`.
    #[serde(default)]
    pub eval_tasks: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub voxel: f64,
    pub eps_m: f64,
    pub orientation: OrientationSpec,
    pub ik: IkParams,
    pub clearance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            voxel: 0.02,
            eps_m: 0.1,
            orientation: OrientationSpec::none(),
            ik: IkParams::default(),
            clearance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestConfig {
    /// Jittered copies of each training task planned to collect infeasible runs.
    pub variants: usize,
    pub jitter_pos: [f64; 3],
    pub jitter_rot_deg: [f64; 3],
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            variants: 16,
            jitter_pos: [0.01, 0.01, 0.0],
            jitter_rot_deg: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub hrl: HrlConfig,
    #[serde(default)]
    pub harvest: HarvestConfig,
    #[serde(default)]
    pub drl: DrlConfig,
    #[serde(default)]
    pub switch: SwitchConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse("run config", e.message().to_string()))?;
        cfg.base = base.to_path_buf();
        Ok(cfg)
    }

    /// Parse and validate; every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::from_toml_str(&read_to_string(path)?, &base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn required(&self, field: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        match p {
            Some(p) => Ok(self.resolve(p)),
            None => Err(Error::Config(format!("paths.{field} is required"))),
        }
    }

    pub fn workcell_path(&self) -> Result<PathBuf> {
        self.required("workcell", &self.paths.workcell)
    }

    pub fn library_path(&self) -> Result<PathBuf> {
        self.required("library", &self.paths.library)
    }

    pub fn tasks_path(&self) -> Result<PathBuf> {
        self.required("tasks", &self.paths.tasks)
    }

    pub fn eval_tasks_path(&self) -> Result<PathBuf> {
        match &self.paths.eval_tasks {
            Some(p) => Ok(self.resolve(p)),
            None => self.tasks_path(),
        }
    }

    pub fn out_path(&self) -> Result<PathBuf> {
        self.required("out", &self.paths.out)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("workcell", self.workcell_path()?),
            ("library", self.library_path()?),
            ("tasks", self.tasks_path()?),
            ("eval_tasks", self.eval_tasks_path()?),
        ] {
            if !p.exists() {
                return Err(Error::Config(format!("paths.{field}: {} does not exist", p.display())));
            }
        }
        self.out_path()?;
        if !(self.map.voxel > 0.0) || !(self.map.eps_m >= 0.0) {
            return Err(Error::Config("map: voxel must be positive and eps_m non-negative".into()));
        }
        self.drl.ppo.validate()?;
        self.switch.validate()?;
        self.bench.criteria.validate()?;
        Ok(())
    }

    pub fn map_spec(&self, workcell: &Workcell) -> MapSpec {
        MapSpec {
            workspace: workcell.workspace,
            voxel: self.map.voxel,
            orientation: self.map.orientation,
            eps_m: self.map.eps_m,
            ik: self.map.ik,
            seed: self.seed,
            clearance: self.map.clearance,
        }
    }

    /// Run metadata: seed, resolved configuration and parameter provenance.
    pub fn run_meta(&self) -> Value {
        json!({
            "seed": self.seed,
            "config": serde_json::to_value(self).expect("config serializes"),
            "provenance": provenance(self),
        })
    }
}

/// One tracked hyperparameter and where its default comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceEntry {
    pub key: String,
    pub value: f64,
    pub default: f64,
    /// `published` for the reference hyperparameter tables, `declared` otherwise.
    pub source: &'static str,
    pub overridden: bool,
}

fn entry(key: impl Into<String>, value: f64, default: f64, source: &'static str) -> ProvenanceEntry {
    ProvenanceEntry {
        key: key.into(),
        value,
        default,
        source,
        overridden: value != default,
    }
}

fn ppo_entries(out: &mut Vec<ProvenanceEntry>, prefix: &str, p: &PpoConfig, d: &PpoConfig) {
    let keys: [(&'static str, f64, f64, &'static str); 10] = [
        ("learning_rate", p.learning_rate, d.learning_rate, "published"),
        ("gamma", p.gamma, d.gamma, "published"),
        ("minibatch_size", p.minibatch_size as f64, d.minibatch_size as f64, "published"),
        ("num_steps", p.num_steps as f64, d.num_steps as f64, "published"),
        ("ent_coef", p.ent_coef, d.ent_coef, "published"),
        ("vf_coef", p.vf_coef, d.vf_coef, "published"),
        ("max_grad_norm", p.max_grad_norm, d.max_grad_norm, "published"),
        ("clip_eps", p.clip_eps, d.clip_eps, "declared"),
        ("gae_lambda", p.gae_lambda, d.gae_lambda, "declared"),
        ("epochs", p.epochs as f64, d.epochs as f64, "declared"),
    ];
    for (k, v, dv, src) in keys {
        out.push(entry(format!("{prefix}.{k}"), v, dv, src));
    }
}

pub fn provenance(cfg: &RunConfig) -> Vec<ProvenanceEntry> {
    let hd = HrlConfig::default();
    let dd = DqnConfig::default();
    let q = &cfg.hrl.dqn;
    let mut out = vec![
        entry("hrl.dqn.batch_size", q.batch_size as f64, dd.batch_size as f64, "published"),
        entry("hrl.dqn.gamma", q.gamma, dd.gamma, "published"),
        entry("hrl.dqn.tau", q.tau, dd.tau, "published"),
        entry("hrl.dqn.learning_rate", q.learning_rate, dd.learning_rate, "published"),
        entry("hrl.epsilon_start", cfg.hrl.epsilon_start, hd.epsilon_start, "published"),
        entry("hrl.epsilon_end", cfg.hrl.epsilon_end, hd.epsilon_end, "published"),
        entry("hrl.epsilon_decay", cfg.hrl.epsilon_decay, hd.epsilon_decay, "published"),
        entry("hrl.alpha", cfg.hrl.alpha, hd.alpha, "declared"),
        entry("hrl.gamma", cfg.hrl.gamma, hd.gamma, "declared"),
        entry("hrl.delta_beta", cfg.hrl.delta_beta, hd.delta_beta, "declared"),
    ];
    ppo_entries(&mut out, "drl.ppo", &cfg.drl.ppo, &PpoConfig::drl_default());
    let dd = DrlConfig::default();
    out.extend([
        entry("drl.max_step_deg", cfg.drl.max_step_deg, dd.max_step_deg, "declared"),
        entry("drl.goal_radius", cfg.drl.goal_radius, dd.goal_radius, "declared"),
        entry("drl.time_cost", cfg.drl.time_cost, dd.time_cost, "declared"),
        entry("drl.budget", cfg.drl.budget as f64, dd.budget as f64, "declared"),
    ]);
    ppo_entries(&mut out, "switch.ppo", &cfg.switch.ppo, &PpoConfig::switch_default());
    let sd = SwitchConfig::default();
    out.extend([
        entry("switch.window", cfg.switch.window as f64, sd.window as f64, "declared"),
        entry("switch.blend_step_deg", cfg.switch.blend_step_deg, sd.blend_step_deg, "declared"),
        entry("map.eps_m", cfg.map.eps_m, MapConfig::default().eps_m, "declared"),
        entry("map.voxel", cfg.map.voxel, MapConfig::default().voxel, "declared"),
    ]);
    out
}
