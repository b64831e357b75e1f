use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hybridplan::config::RunConfig;
use hybridplan::dualquat::{DualQuaternion, Quaternion, Vec3};
use hybridplan::feasibility::{build_map, FeasibilityMap};
use hybridplan::hrl::{plan_lfd, Task};
use hybridplan::lfd::{retarget, Demonstration};
use hybridplan::pipeline::{self, Inputs, Stage, Trained};
use hybridplan::trajectory::{save_joint_trajectory, save_task_trajectory};
use hybridplan::workcell::{Variant, Workcell};
use hybridplan::{Error, Result};

#[derive(Parser)]
#[command(name = "hybridplan", version, about = "Hybrid LfD / DRL motion planning with a learned switching agent")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Feasibility map tools.
    #[command(subcommand)]
    Map(MapCmd),
    /// Demonstration tools.
    #[command(subcommand)]
    Lfd(LfdCmd),
    /// Train a single offline stage (upstream artifacts are read from the output directory).
    Train {
        stage: TrainStage,
        #[arg(long)]
        config: PathBuf,
    },
    /// Plan one task with a trained artifact set.
    Plan {
        planner: Planner,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        task: PathBuf,
        /// Joint (or, for `lfd`, pose) trajectory output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Success rates per variant over jittered trials of the evaluation tasks.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "hybrid,drl-only,lfd-only")]
        variants: Vec<VariantArg>,
        /// Overrides `bench.trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-trial CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum MapCmd {
    /// Build the feasibility map of the configured workcell.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Look up the cell of a pose.
    Query {
        #[arg(long)]
        map: PathBuf,
        /// `x,y,z[,roll,pitch,yaw]`, angles in degrees.
        #[arg(long)]
        pose: String,
    },
}

#[derive(Subcommand)]
enum LfdCmd {
    /// Convert a CSV of `x,y,z,roll,pitch,yaw` rows (degrees) into a demonstration file.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retarget a demonstration between two poses.
    Retarget {
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        start: String,
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Map, global planner, segment harvest, joint-space agent and switching agent.
    Offline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Plan and replay one task; writes traj_final and a JSON report.
    Online {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; defaults to `paths.out`.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainStage {
    Map,
    Hrl,
    Harvest,
    Drl,
    Switch,
    /// Stand-alone DRL planner used by the drl-only variant.
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Lfd,
    Drl,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Hybrid,
    DrlOnly,
    LfdOnly,
}

fn parse_pose(s: &str) -> Result<DualQuaternion> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse("pose", e.to_string()))?;
    if v.len() != 3 && v.len() != 6 {
        return Err(Error::parse("pose", format!("expected 3 or 6 numbers, got {}", v.len())));
    }
    let rpy = if v.len() == 6 { [v[3], v[4], v[5]].map(f64::to_radians) } else { [0.0; 3] };
    Ok(DualQuaternion::from_rotation_translation(
        Quaternion::from_euler(rpy[0], rpy[1], rpy[2]),
        &Vec3::new(v[0], v[1], v[2]),
    ))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_run(run: &RunArgs) -> Result<(Inputs, Trained)> {
    let inputs = Inputs::from_config_file(&run.config)?;
    let dir = match &run.artifacts {
        Some(d) => d.clone(),
        None => inputs.cfg.out_path()?,
    };
    let trained = Trained::load(&dir, &inputs)?;
    Ok((inputs, trained))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Map(MapCmd::Build { config, out }) => {
            let cfg = RunConfig::load(&config)?;
            let wc_path = cfg.workcell_path()?;
            let wc = Workcell::load(&wc_path)?;
            let model = wc.robot_model(wc_path.parent())?;
            let map = build_map(&model, &wc.obstacles, &cfg.map_spec(&wc)).map_err(|e| e.in_stage("map"))?;
            map.save(&out)?;
            println!("{} of {} cells feasible", map.feasible_count(), map.len());
        }
        Cmd::Map(MapCmd::Query { map, pose }) => {
            let pose = parse_pose(&pose)?;
            let map = FeasibilityMap::load(&map)?;
            let Some(index) = map.cell_of(&pose) else {
                println!("{}", json!({ "inside": false }));
                return Ok(());
            };
            let c = map.cell(index);
            let out = json!({
                "inside": true,
                "index": c.index,
                "feasible": c.feasible,
                "man_prime": c.man_prime,
                "reason": c.reason.as_str(),
                "witness": map.witness(index),
            });
            println!("{out}");
        }
        Cmd::Lfd(LfdCmd::Import { input, id, tags, out }) => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .comment(Some(b'#'))
                .from_path(&input)
                .map_err(|e| Error::parse(input.display().to_string(), e.to_string()))?;
            let mut poses = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::parse(input.display().to_string(), e.to_string()))?;
                let row: Vec<&str> = rec.iter().collect();
                poses.push(parse_pose(&row.join(","))?);
            }
            let demo = Demonstration::new(&id, tags, poses)?;
            std::fs::write(&out, demo.to_text()).map_err(|e| Error::io(&out, e))?;
        }
        Cmd::Lfd(LfdCmd::Retarget {
            demo,
            start,
            goal,
            points,
            out,
        }) => {
            let demo = Demonstration::load(&demo)?;
            let poses = retarget(&demo, &parse_pose(&start)?, &parse_pose(&goal)?, points)?;
            save_task_trajectory(&out, &poses)?;
        }
        Cmd::Train { stage, config } => {
            let inputs = Inputs::from_config_file(&config)?;
            let out = inputs.cfg.out_path()?;
            ensure_dir(&out)?;
            let stage = match stage {
                TrainStage::Map => Stage::Map,
                TrainStage::Hrl => Stage::Hrl,
                TrainStage::Harvest => Stage::Harvest,
                TrainStage::Drl => Stage::Drl,
                TrainStage::Switch => Stage::Switch,
                TrainStage::Baseline => Stage::Baseline,
            };
            pipeline::run_stages(&inputs, &out, &[stage])?;
        }
        Cmd::Plan { planner, run, task, out } => {
            let (inputs, trained) = load_run(&run)?;
            let task = Task::load(&task)?;
            let art = trained.artifacts(&inputs);
            match planner {
                Planner::Lfd => {
                    let plan = plan_lfd(&task, art.lib, art.tables, art.hrl).map_err(|e| e.in_stage("plan_lfd"))?;
                    save_task_trajectory(&out, &plan.poses)?;
                    println!("{} poses, reward {:.4}", plan.poses.len(), plan.total_reward());
                }
                Planner::Drl => {
                    let mut rng = ChaCha8Rng::seed_from_u64(inputs.cfg.seed);
                    let traj = pipeline::plan_variant(Variant::DrlOnly, &inputs, &trained, &task, &mut rng)?;
                    save_joint_trajectory(&out, &traj)?;
                    println!("{} waypoints", traj.len());
                }
                Planner::Hybrid => {
                    let online = pipeline::pipeline_online(&inputs, &trained, &task, inputs.cfg.seed)?;
                    save_joint_trajectory(&out, &online.result.traj_final)?;
                    println!("{}", serde_json::to_string_pretty(&online.result.report)?);
                }
            }
        }
        Cmd::Bench {
            run,
            variants,
            trials,
            seed,
            out,
        } => {
            let (mut inputs, trained) = load_run(&run)?;
            if let Some(t) = trials {
                inputs.cfg.bench.trials = t;
            }
            let tasks = inputs.eval_tasks()?;
            let variants: Vec<Variant> = variants
                .iter()
                .map(|v| match v {
                    VariantArg::Hybrid => Variant::Hybrid,
                    VariantArg::DrlOnly => Variant::DrlOnly,
                    VariantArg::LfdOnly => Variant::LfdOnly,
                })
                .collect();
            let result = pipeline::run_bench(&inputs, &trained, &variants, &tasks, seed.unwrap_or(inputs.cfg.seed));
            if let Some(out) = out {
                result.write_csv(&out)?;
            }
            print!("{}", result.table());
        }
        Cmd::Pipeline(PipelineCmd::Offline { config }) => {
            let inputs = Inputs::from_config_file(&config)?;
            let out = inputs.cfg.out_path()?;
            ensure_dir(&out)?;
            let manifest = pipeline::pipeline_offline(&inputs, &out)?;
            for (name, hash) in &manifest.artifacts {
                println!("{hash}  {name}");
            }
        }
        Cmd::Pipeline(PipelineCmd::Online { run, task, out, report }) => {
            let (inputs, trained) = load_run(&run)?;
            let task = Task::load(&task)?;
            let online = pipeline::pipeline_online(&inputs, &trained, &task, inputs.cfg.seed)?;
            save_joint_trajectory(&out, &online.result.traj_final)?;
            let doc = json!({
                "plan": online.result.report,
                "execution": online.verdict,
            });
            match report {
                Some(p) => write_json(&p, &doc)?,
                None => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
            println!("success: {}", online.verdict.success);
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("HYBRIDPLAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HYBRIDPLAN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match init_threads().and_then(|_| run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!(": {s}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
