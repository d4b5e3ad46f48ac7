use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plausiscene"));
    cmd.env("PLAUSISCENE_THREADS", "1");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn plausiscene");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn parse_row(line: &str) -> Vec<String> {
    line.split(',').map(str::to_string).collect()
}

#[test]
fn graph_dump_matches_brute_force_corner_distance() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("two_elements.json");
    run_ok(&["graph-dump", "--scene", s(&fx), "--out", s(dir.path())]);

    let nodes = std::fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
    let edges = std::fs::read_to_string(dir.path().join("edges.csv")).unwrap();
    let node_lines: Vec<&str> = nodes.lines().collect();
    let edge_lines: Vec<&str> = edges.lines().collect();
    assert_eq!(node_lines.len(), 1 + 2);
    assert_eq!(edge_lines.len(), 1 + 2);

    let header = parse_row(edge_lines[0]);
    assert_eq!(header.len(), 3 + 64 + 108);
    let col = header.iter().position(|h| h == "d63").unwrap();

    // Corner 7 is (+h_x, +h_y, +h_z) in the local frame.
    let chair_c7 = [0.2, 0.2, 0.8];
    // Table yawed by +90 degrees: local (0.5, 0.3, 0.375) maps to (-0.3, 0.5, 0.375).
    let table_c7 = [1.0 - 0.3, 0.5 + 0.5, 0.375 + 0.375];
    let expected = chair_c7
        .iter()
        .zip(table_c7)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    for line in &edge_lines[1..] {
        let row = parse_row(line);
        assert_eq!(row.len(), header.len());
        let d: f64 = row[col].parse().unwrap();
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }
    let first = parse_row(edge_lines[1]);
    assert_eq!((first[1].as_str(), first[2].as_str()), ("0", "1"));
}

#[test]
fn score_against_itself_has_unit_iou() {
    let fx = fixture("two_elements.json");
    let out = run_ok(&["score", "--scene", s(&fx), "--reference", s(&fx)]);
    let v = stdout_json(&out);
    assert_eq!(v["iou3d"].as_f64(), Some(1.0));
    assert_eq!(v["iou2d_bev"].as_f64(), Some(1.0));
}

#[test]
fn missing_file_reports_io_failure() {
    let out = bin()
        .args(["score", "--scene", "/nonexistent/scene.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "IOFailure");
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("two_elements.json")).unwrap();
    let path = dir.path().join("future.json");
    std::fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 99")).unwrap();
    let out = bin().args(["graph-dump", "--scene", s(&path)]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "SchemaVersionMismatch");
}

#[test]
fn bad_arguments_report_bad_config() {
    let out = bin()
        .args(["eval", "--weights", "w.json", "--data", "d", "--split", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "BadConfig");
}

#[test]
fn bad_thread_count_reports_bad_config() {
    let fx = fixture("two_elements.json");
    let out = bin()
        .env("PLAUSISCENE_THREADS", "zero")
        .args(["score", "--scene", s(&fx)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "BadConfig");
}

#[test]
fn gen_train_eval_refine_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let weights = dir.path().join("weights.json");

    let gen = stdout_json(&run_ok(&[
        "gen",
        "--acceptance",
        "--count",
        "40",
        "--seed",
        "5",
        "--out",
        s(&data),
    ]));
    assert_eq!(gen["count"], 40);
    assert!(data.join("manifest.csv").exists());

    // Same seed gives the same manifest.
    let data2 = dir.path().join("data2");
    let gen2 = stdout_json(&run_ok(&[
        "gen",
        "--acceptance",
        "--count",
        "40",
        "--seed",
        "5",
        "--out",
        s(&data2),
    ]));
    assert_eq!(gen["manifest_sha256"], gen2["manifest_sha256"]);

    let trained = stdout_json(&run_ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&weights),
        "--epochs",
        "2",
        "--hidden",
        "8",
        "--batch-size",
        "4",
    ]));
    assert!(weights.exists());
    assert_eq!(trained["epochs_run"], 2);
    let report = dir.path().join("weights.json.report.json");
    assert!(report.exists());
    assert!(report.with_extension("csv").exists());

    let eval = stdout_json(&run_ok(&[
        "eval",
        "--weights",
        s(&weights),
        "--data",
        s(&data),
        "--split",
        "test",
    ]));
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    let scene_rel = manifest
        .lines()
        .skip(1)
        .map(parse_row)
        .find(|r| r[1] == "implausible")
        .map(|r| r[0].clone())
        .expect("an implausible scene");
    let scene = data.join(scene_rel);
    let refined = dir.path().join("refined.json");
    let summary = stdout_json(&run_ok(&[
        "refine",
        "--weights",
        s(&weights),
        "--scene",
        s(&scene),
        "--steps",
        "3",
        "--out",
        s(&refined),
    ]));
    assert!(refined.exists());
    assert!(summary["final_score"].as_f64().unwrap() >= summary["initial_score"].as_f64().unwrap());
    let trajectory = std::fs::read_to_string(dir.path().join("refined.json.trajectory.csv")).unwrap();
    assert!(trajectory.lines().count() >= 2);

    let scored = stdout_json(&run_ok(&["score", "--scene", s(&refined), "--reference", s(&scene)]));
    assert!(scored["iou3d"].as_f64().is_some());

    let svg = dir.path().join("curves.svg");
    run_ok(&["plot", "--report", s(&report), "--out", s(&svg)]);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
}
