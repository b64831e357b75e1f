use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hybridplan"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn tray() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/scenarios/tray").canonicalize().unwrap()
}

/// Small tray configuration writing into `dir`.
fn write_config(dir: &Path, with_library: bool) -> PathBuf {
    let t = tray();
    let lib = if with_library { format!("library = {:?}\n", t.join("demos")) } else { String::new() };
    let text = format!(
        "seed = 3\n\n[paths]\nworkcell = {:?}\n{lib}tasks = {:?}\neval_tasks = {:?}\nout = \"out\"\n\n\
         [map]\nvoxel = 0.03\nclearance = 0.01\n\n[hrl]\nepisodes = 100\n\n[harvest]\nvariants = 2\n\n\
         [drl]\nupdates = 2\ngoal_radius = 0.03\n\n[switch]\nupdates = 2\nvariants_per_task = 1\n\n[bench]\ntrials = 1\n",
        t.join("workcell.toml"),
        t.join("tasks"),
        t.join("eval"),
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["map", "query", "--map", "m.bin"]).status.code(), Some(1));
}

#[test]
fn missing_library_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), false);
    let o = run(&["pipeline", "offline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("paths.library"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_pose_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.bin");
    let o = run(&["map", "query", "--map", map.to_str().unwrap(), "--pose", "0.1,abc,0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn map_build_then_query() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), true);
    let map = dir.path().join("map.bin");
    let o = run(&["map", "build", "--config", cfg.to_str().unwrap(), "--out", map.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["map", "query", "--map", map.to_str().unwrap(), "--pose", "0.12,0.12,0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!o.stdout.is_empty());
}

#[test]
fn offline_then_online_and_stale_artifact_abort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), true);
    let cfg = cfg.to_str().unwrap();
    let o = run(&["pipeline", "offline", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("manifest.json").exists());

    let task = tray().join("eval/eval_tool_00.task");
    let traj = dir.path().join("final.txt");
    let report = dir.path().join("report.json");
    let online = |traj: &Path| {
        run(&[
            "pipeline",
            "online",
            "--config",
            cfg,
            "--task",
            task.to_str().unwrap(),
            "--out",
            traj.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
    };
    let o = online(&traj);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("success: "), "{stdout}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["execution"]["success"].is_boolean());
    assert!(doc["plan"]["max_step_deg"].as_f64().unwrap() <= 2.0 + 1e-9);
    assert!(std::fs::metadata(&traj).unwrap().len() > 0);

    // Any edit to a recorded artifact must stop online execution.
    let ckpt = out.join("switch.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.push(b'\n');
    std::fs::write(&ckpt, bytes).unwrap();
    let stale = dir.path().join("stale.txt");
    let o = online(&stale);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("stale artifact"), "{}", stderr(&o));
    assert!(!stale.exists());
}
