use fblab_core::grid::io;
use fblab_core::pipeline::OUT_DIR_ENV;
use fblab_core::{Grid, SpaceTimeField};
use std::path::Path;
use std::process::{Command, Output};

fn fblab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fblab")).args(args).env_remove(OUT_DIR_ENV).output().expect("binary runs")
}

fn text(out: &Output) -> (String, String) {
    (String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const FAST: [&str; 6] = ["--scenario", "time_only", "--nx", "41", "--eps-min", "0.0125"];

#[test]
fn list_scenarios_prints_every_label() {
    let out = fblab(&["list-scenarios"]);
    assert!(out.status.success());
    let (stdout, _) = text(&out);
    for label in ["time_only", "local_cap", "self_similar_1d", "elliptic_cross", "collapsing_interval", "custom"] {
        assert!(stdout.contains(label), "{label} missing from {stdout}");
    }
}

#[test]
fn time_only_run_writes_manifest_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let mut args = FAST.to_vec();
    args.extend(["--out-dir", out_dir.to_str().unwrap()]);
    let out = fblab(&[&["run"], args.as_slice()].concat());
    assert_eq!(out.status.code(), Some(0), "{:?}", text(&out));
    let m = manifest(&out_dir);
    assert_eq!(m["pass"], true);
    assert_eq!(m["scenario"], "time_only");
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["solve", "boundary"]);
    let u = io::read_binary(&out_dir.join("u.fbf")).unwrap();
    assert_eq!(u.grid().nx(), 41);
    assert!(out_dir.join("boundary.csv").exists());
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_fblab"))
        .args(["run", "--stages", "solve"])
        .args(FAST)
        .env(OUT_DIR_ENV, &out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", text(&out));
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn failed_check_exits_3_and_still_writes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--c", "2", "--out-dir", dir.path().to_str().unwrap()];
    args.extend(FAST);
    let out = fblab(&args);
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(dir.path());
    assert_eq!(m["pass"], false);
    assert_eq!(m["stages"][0]["status"], "fail");
    assert_eq!(m["stages"][1]["status"], "skipped");
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nscenario = \"time_only\"\n[grid]\nnxx = 3\n").unwrap();
    let out = fblab(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let (_, stderr) = text(&out);
    assert!(stderr.contains("line 4") && stderr.contains("nxx"), "{stderr}");

    std::fs::write(&bad, "schema_version = 1\nscenario = \"time_only\"\n[analysis]\nalpha = 1.5\n").unwrap();
    let out = fblab(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).1.contains("analysis.alpha"));

    for args in [
        vec!["run"],
        vec!["run", "--scenario", "no_such_scenario"],
        vec!["run", "--scenario", "time_only", "--stages", "solve,bogus"],
        vec!["run", "--scenario", "time_only", "--weiss-variant", "other"],
        vec!["run", "--unknown-flag"],
        vec!["acceptance", "--only", "11"],
    ] {
        let out = fblab(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {:?}", text(&out));
    }
}

#[test]
fn dry_run_prints_a_loadable_config() {
    let out = fblab(&["run", "--scenario", "collapsing_interval", "--nx", "101", "--dry-run"]);
    assert!(out.status.success());
    let cfg = fblab_core::pipeline::RunConfig::from_toml(&text(&out).0).unwrap();
    assert_eq!(cfg.grid.nx, 101);
}

fn small_field(dir: &Path) -> std::path::PathBuf {
    let grid = Grid::new(1, 0.0, 1.0, 3, 0.0, 1.0, 3).unwrap();
    let u = SpaceTimeField::from_fn(grid, |x, t| x[0] + 10.0 * t).unwrap();
    let path = dir.join("small.fbf");
    io::write_binary(&u, &path).unwrap();
    path
}

#[test]
fn export_csv_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_field(dir.path());
    let out = fblab(&["export", input.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = text(&out).0;
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1 + 9);
    assert_eq!(lines[0], "t,x,value");
    assert_eq!(lines[9], "1,1,11");

    let csv = dir.path().join("small.csv");
    let out = fblab(&["export", input.to_str().unwrap(), "-o", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(csv).unwrap(), stdout);
}

#[test]
fn export_binary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_field(dir.path());
    let copy = dir.path().join("copy.fbf");
    let out = fblab(&["export", input.to_str().unwrap(), "--format", "fbf", "-o", copy.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn export_reports_the_missing_path() {
    let out = fblab(&["export", "/nonexistent/field.fbf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).1.contains("/nonexistent/field.fbf"));
}

#[test]
fn acceptance_subset_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("acc.json");
    let out = fblab(&["acceptance", "--only", "1,2", "--json", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{:?}", text(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(text(&out).0.contains("criterion  1 [PASS]"));
}
