use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn microteleop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microteleop")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_telemetry_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bubble.toml", "scenario = \"bubble_manipulation\"\nduration = 3.0\n");
    let out = dir.path().join("t.csv");
    let o = microteleop(&["run", s(&cfg), "--out", s(&out), "--frames-per-flush", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["frames"], 3000);
    assert!(report["metrics"]["max_steady_state_error"].is_number());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3001);
    assert_eq!(text.lines().filter(|l| l.starts_with("t,")).count(), 1);

    let o = microteleop(&["metrics", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["frames"], 3000);

    let jsonl = dir.path().join("t.jsonl");
    assert_eq!(microteleop(&["run", s(&cfg), "--out", s(&jsonl)]).status.code(), Some(0));
    let o = microteleop(&["metrics", s(&jsonl)]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["metrics"], report["metrics"]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("zero.toml", "scenario = \"bead_push\"\n[teleop]\ndt = 0.0\n", "dt"),
        ("unknown.toml", "scenario = \"bead_push\"\nspeed = 2\n", "speed"),
        ("syntax.toml", "scenario = \"bead_push\n", "line 1"),
        ("missing.toml", "duration = 1.0\n", "scenario"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(dir.path(), name, text);
        for args in [vec!["run", s(&cfg)], vec!["analyze-stability", s(&cfg)]] {
            let o = microteleop(&args);
            assert_eq!(o.status.code(), Some(1), "{name}");
            assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    assert_eq!(microteleop(&["run", s(&dir.path().join("absent.toml"))]).status.code(), Some(1));
    assert_eq!(microteleop(&["metrics", s(&dir.path().join("absent.csv"))]).status.code(), Some(1));
}

#[test]
fn runtime_faults_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a stiff operator spring makes the explicit handle integration blow up
    let cfg = write(dir.path(), "stiff.toml", "scenario = \"bead_push\"\n[teleop.operator]\nstiffness = 1e12\ndamping = 0.0\n");
    let out = dir.path().join("partial.csv");
    let o = microteleop(&["run", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
    // frames up to the fault are kept
    assert!(fs::read_to_string(&out).unwrap().lines().count() > 2);

    let ok = write(dir.path(), "ok.toml", "scenario = \"bubble_manipulation\"\nduration = 0.1\n");
    let o = microteleop(&["run", s(&ok), "--out", s(&dir.path().join("no/such/dir.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stability_table_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bead.toml", "scenario = \"bead_push\"\n");
    let o = microteleop(&["analyze-stability", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().split_whitespace().nth(1) == Some("true"), "{text}");

    let o = microteleop(&["analyze-stability", s(&cfg), "--sweep", "teleop.force_gains.f_max=1e-6:1e-4:3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("teleop.force_gains.f_max"));

    for sweep in ["teleop.nothing=1:2:3", "teleop.dt=1:2", "teleop.dt=0:1e-3:3"] {
        let o = microteleop(&["analyze-stability", s(&cfg), "--sweep", sweep]);
        assert_eq!(o.status.code(), Some(1), "{sweep}");
    }
}
