use std::path::Path;

use hybridplan::config::RunConfig;
use hybridplan::pipeline::{pipeline_offline, pipeline_online, Inputs, Manifest, Trained, DRL, MANIFEST};
use hybridplan::workcell::execute;
use hybridplan::Error;

fn small(scenario: &str, out: &Path) -> Inputs {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/scenarios").join(scenario).join("run.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.paths.out = Some(out.to_path_buf());
    cfg.map.voxel = 0.03;
    cfg.hrl.episodes = 100;
    cfg.harvest.variants = 2;
    cfg.drl.updates = 2;
    cfg.switch.updates = 2;
    cfg.switch.variants_per_task = 1;
    Inputs::load(cfg).unwrap()
}

#[test]
fn online_verdict_matches_replay_and_stale_artifacts_abort() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let inputs = small("tray", &out);
    let manifest = pipeline_offline(&inputs, &out).unwrap();
    assert_eq!(Manifest::load(&out).unwrap(), manifest);
    manifest.verify_all(&out).unwrap();
    for name in manifest.artifacts.keys() {
        assert!(out.join(name).exists(), "{name}");
    }

    let trained = Trained::load(&out, &inputs).unwrap();
    let task = &inputs.eval_tasks().unwrap()[0];
    let online = pipeline_online(&inputs, &trained, task, 5).unwrap();
    let replay = execute(&online.result.traj_final, &inputs.model, inputs.obstacles(), &inputs.cfg.bench.criteria, task);
    assert_eq!(online.verdict, replay);
    assert!(online.result.report.max_step_deg <= 2.0 + 1e-9);
    let again = pipeline_online(&inputs, &trained, task, 5).unwrap();
    assert_eq!(again.result.traj_final, online.result.traj_final);

    let ckpt = out.join(DRL);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&ckpt, bytes).unwrap();
    assert!(matches!(Trained::load(&out, &inputs), Err(Error::StaleArtifact { .. })));

    std::fs::remove_file(out.join(MANIFEST)).unwrap();
    assert!(matches!(Trained::load(&out, &inputs), Err(Error::MissingArtifact(_))));
}

#[test]
fn open_workspace_needs_no_bridge() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let inputs = small("open", &out);
    pipeline_offline(&inputs, &out).unwrap();
    let trained = Trained::load(&out, &inputs).unwrap();
    for (i, task) in inputs.eval_tasks().unwrap().iter().enumerate() {
        let online = pipeline_online(&inputs, &trained, task, i as u64).unwrap();
        let rep = &online.result.report;
        assert!(rep.bands.is_empty() && rep.drl_points == 0, "{}: {} bands", task.id, rep.bands.len());
        assert!(online.verdict.success, "{}: {:?}", task.id, online.verdict);
    }
}
