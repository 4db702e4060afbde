use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenegraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenegraft")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn fixture(out: &Path, kind: &str, scenes: &str) {
    let o = scenegraft(&["fixture", "--kind", kind, "--out", out.to_str().unwrap(), "--seed", "5", "--scenes", scenes]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fixture_validate_generate_evaluate() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    fixture(root, "surround-fisheye", "2");
    let dataset = root.join("dataset");

    let o = scenegraft(&["validate", "--dataset", dataset.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 scenes, 0 rejected, 0 unreadable"));

    let config = root.join("config.toml");
    let o = scenegraft(&["generate", "--config", config.to_str().unwrap(), "--seed", "3", "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("output/report.json").is_file());

    // Existing output is refused without --overwrite.
    let o = scenegraft(&["generate", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = scenegraft(&["generate", "--config", config.to_str().unwrap(), "--overwrite"]);
    assert_eq!(code(&o), 0);

    let o = scenegraft(&["validate", "--dataset", root.join("output").to_str().unwrap()]);
    assert_eq!(code(&o), 0);

    let report = root.join("eval.json");
    for task in ["obstacle", "freespace"] {
        let o = scenegraft(&[
            "evaluate",
            "--pred",
            dataset.to_str().unwrap(),
            "--gt",
            dataset.to_str().unwrap(),
            "--task",
            task,
            "--report",
            report.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
        assert_eq!(json["result"]["task"], task);
    }
}

#[test]
fn validation_failure_exits_2() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path(), "stereo-pinhole", "1");
    let o = scenegraft(&["validate", "--dataset", dir.path().join("dataset").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("coverage"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"x\"").unwrap();
    assert_eq!(code(&scenegraft(&["generate", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn io_failure_exits_1() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&scenegraft(&["generate", "--config", missing.to_str().unwrap()])), 1);
    let o = scenegraft(&["validate", "--dataset", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    fixture(dir.path(), "parking", "2");
    let scene = dir.path().join("dataset/parking-0001");
    std::fs::remove_file(scene.join("front.png")).unwrap();
    assert_eq!(code(&scenegraft(&["validate", "--dataset", dir.path().join("dataset").to_str().unwrap()])), 1);
}
