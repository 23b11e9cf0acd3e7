use std::fs;
use std::process::Command;

fn dimprof() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dimprof"))
}

#[test]
fn passing_run_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "sets = [\"cantor:1/3:5\"]\ncells = 9\ntrials = 10\n").unwrap();
    let out = dimprof()
        .args(["verify-sandwich", "--config"])
        .arg(&cfg)
        .arg("--override")
        .arg(format!("output_dir={}", dir.path().join("out").display()))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".json")));
    assert!(names.iter().any(|n| n.ends_with("-sandwich.csv")));
    let json = names.iter().find(|n| n.ends_with(".json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out").join(json)).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["cells"], 9);
}

#[test]
fn failing_tolerance_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dimprof()
        .args(["verify-sandwich", "--override", "trials=0", "--override", "tol_sandwich=-1"])
        .arg("--override")
        .arg(format!("output_dir={}", dir.path().display()))
        .args(["--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL]"));
}

#[test]
fn bad_config_exits_two() {
    let out = dimprof().args(["verify-z2", "--override", "no_such_key=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dimprof().args(["verify-everything"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn prints_resolved_config() {
    let out = dimprof().args(["verify-lb1", "--print-config", "--override", "seed=5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("experiment = \"verify-lb1\""));
    assert!(text.contains("seed = 5"));
}
