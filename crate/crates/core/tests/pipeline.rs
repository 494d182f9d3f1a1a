use fblab_core::grid::io;
use fblab_core::pipeline::{run_scenario, RunConfig, RunManifest, Stage, StageStatus, FIELD_FILE, MANIFEST_FILE};
use fblab_core::solver::ScenarioLabel;

fn time_only() -> RunConfig {
    let mut cfg = RunConfig::for_scenario(ScenarioLabel::TimeOnly);
    cfg.grid.nx = 41;
    cfg.schedule.eps_min = 0.0125;
    cfg
}

#[test]
fn repeated_runs_are_identical_apart_from_timings() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = time_only();
    let ma = run_scenario(&cfg, a.path()).unwrap();
    let mb = run_scenario(&cfg, b.path()).unwrap();
    assert!(ma.pass);
    assert_eq!(ma.without_timings(), mb.without_timings());
    let fa = std::fs::read(a.path().join(FIELD_FILE)).unwrap();
    assert_eq!(fa, std::fs::read(b.path().join(FIELD_FILE)).unwrap());
    assert_eq!(std::fs::read(a.path().join("boundary.csv")).unwrap(), std::fs::read(b.path().join("boundary.csv")).unwrap());
}

#[test]
fn manifest_on_disk_round_trips_and_records_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = time_only();
    let m = run_scenario(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.config, cfg);
    assert_eq!(back.eps_values.len(), 4);
    assert!(back.timings.contains_key("solve"));
    for name in &back.artifacts {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn downstream_stage_reuses_the_stored_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = time_only();
    cfg.stages = Some(vec![Stage::Solve]);
    run_scenario(&cfg, dir.path()).unwrap();
    let stored = io::read_binary(&dir.path().join(FIELD_FILE)).unwrap();

    cfg.stages = Some(vec![Stage::Boundary]);
    let m = run_scenario(&cfg, dir.path()).unwrap();
    assert_eq!(m.stage(Stage::Boundary).unwrap().status, StageStatus::Pass);
    assert!(m.stage(Stage::Solve).is_none());
    assert_eq!(io::read_binary(&dir.path().join(FIELD_FILE)).unwrap(), stored);
}
