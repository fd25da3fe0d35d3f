mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use portrank::pipeline::StageManifest;
use portrank::report::validate_point_collection;

const STAGES: [&str; 8] = ["ingest", "visits", "network", "centrality", "features", "train", "explain", "report"];

fn portrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portrank")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = portrank(args);
    assert!(
        out.status.success(),
        "portrank {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = portrank(args);
    assert_eq!(out.status.code(), Some(1), "portrank {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy(dir: &Path) -> String {
    ok(&["generate", "toy", path(dir)]);
    path(&dir.join("config.toml")).to_owned()
}

/// Every artifact except manifests, which carry timings.
fn artifacts(root: &Path) -> Vec<(String, Vec<u8>)> {
    common::list_files(root)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.display().to_string(), fs::read(root.join(&p)).unwrap()))
        .collect()
}

fn identities(root: &Path) -> Vec<String> {
    STAGES
        .iter()
        .map(|s| StageManifest::read(&root.join(s).join("manifest.json")).unwrap().identity_hash())
        .collect()
}

#[test]
fn generated_toy_matches_committed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    for name in ["ports.csv", "ais.csv", "config.toml"] {
        let fresh = fs::read(tmp.path().join(name)).unwrap();
        let committed = fs::read(common::toy_dir().join(name)).unwrap();
        assert!(fresh == committed, "{name} drifted from tests/data/toy");
    }
}

#[test]
fn stage_by_stage_equals_all_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stdout = ok(&["all", "--config", &cfg, "--out", path(&a)]);
    assert_eq!(stdout.lines().count(), STAGES.len());
    for stage in STAGES {
        ok(&[stage, "--config", &cfg, "--out", path(&b)]);
    }
    assert!(artifacts(&a) == artifacts(&b));
    assert_eq!(identities(&a), identities(&b));

    ok(&["all", "--config", &cfg, "--out", path(&a), "--force", "--threads", "3"]);
    assert!(artifacts(&a) == artifacts(&b), "thread count changed outputs");
    assert_eq!(identities(&a), identities(&b));
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path());
    let out = tmp.path().join("out");
    ok(&["ingest", "--config", &cfg, "--out", path(&out)]);
    let before = fs::read(out.join("ingest/records.csv")).unwrap();
    let err = fails(&["ingest", "--config", &cfg, "--out", path(&out)]);
    assert!(err.contains("refusing to overwrite"), "{err}");
    assert!(err.contains("without --force"), "{err}");
    assert_eq!(fs::read(out.join("ingest/records.csv")).unwrap(), before);
    ok(&["ingest", "--config", &cfg, "--out", path(&out), "--force"]);
    assert_eq!(fs::read(out.join("ingest/records.csv")).unwrap(), before);

    let err = fails(&["generate", "toy", path(tmp.path())]);
    assert!(err.contains("refusing to overwrite"), "{err}");
}

#[test]
fn missing_upstream_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path());
    let out = tmp.path().join("out");
    let err = fails(&["network", "--config", &cfg, "--out", path(&out)]);
    assert_eq!(err.trim(), "error: visits artifact missing");
    let err = fails(&["explain", "--config", &cfg, "--out", path(&out)]);
    assert!(err.contains("artifact missing"), "{err}");
    assert!(!out.join("network").exists());
}

#[test]
fn config_and_argument_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nbogus = true\n").unwrap();
    let err = fails(&["all", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("bogus"), "{err}");

    let err = fails(&["all", "--out", path(&tmp.path().join("o"))]);
    assert!(err.contains("input.ports"), "{err}");

    let out = portrank(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn planted_world_runs_without_ais_and_reports_valid_geojson() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["generate", "planted", path(tmp.path()), "--seed", "3"]);
    let cfg = tmp.path().join("config.toml");
    let out = tmp.path().join("out");
    let stdout = ok(&["all", "--config", path(&cfg), "--out", path(&out)]);
    assert!(!stdout.contains("ingest"));
    assert!(!out.join("ingest").exists());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report/ports.geojson")).unwrap()).unwrap();
    validate_point_collection(&doc).unwrap();
    let top = common::read_csv(&out.join("report/top_ports.csv"));
    assert!(!top.is_empty());
    assert_eq!(top[0]["Rank"], "1");
    let train = StageManifest::read(&out.join("train/manifest.json")).unwrap();
    assert!(train.metrics["test_auc"] > 0.8);
}
