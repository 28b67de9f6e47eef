use std::path::Path;
use std::process::{Command, Output};

fn dinebench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dinebench"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("spawn dinebench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(out: &Path, condition: &str, policy: &str) -> Output {
    dinebench(&[
        "run",
        "--condition",
        condition,
        "--policy",
        policy,
        "--episodes",
        "3",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_transcripts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "sim3nc", "greedy-left");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("| sim3nc | 1.000 | 0.000 |"));
    for k in 0..3 {
        assert!(dir.path().join(format!("sim3nc/ep{k}.jsonl")).is_file());
    }
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("| sim3nc | 1.000 | 0.000 | 1.000 |"));
}

#[test]
fn report_covers_every_condition_in_standard_order() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_into(dir.path(), "seq5c", "announce").status.success());
    assert!(run_into(dir.path(), "sim5nc", "dijkstra").status.success());

    let o = dinebench(&[
        "report",
        "--in",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    let rows: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(rows, ["sim5nc", "seq5c"]);

    let o = dinebench(&[
        "report",
        "--in",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(o.status.success());
    assert!(dir.path().join("report.json").is_file());
}

#[test]
fn replay_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_into(dir.path(), "sim5c", "random").status.success());
    let path = dir.path().join("sim5c/ep1.jsonl");

    let o = dinebench(&["replay", "--transcript", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("steps verified"));

    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"meals\":[0,0,0,0,0]", "\"meals\":[1,0,0,0,0]", 1);
    assert_ne!(text, tampered);
    std::fs::write(&path, tampered).unwrap();
    let o = dinebench(&["replay", "--transcript", path.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn unknown_condition_lists_valid_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "par4x", "dijkstra");
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sim5nc"), "{}", stderr(&o));
}

#[test]
fn llm_without_key_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = dinebench(&[
        "run",
        "--condition",
        "sim3nc",
        "--policy",
        "llm",
        "--api-key-env",
        "DINEBENCH_CLI_TEST_UNSET_KEY",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("DINEBENCH_CLI_TEST_UNSET_KEY"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn per_slot_policies_must_match_n() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "sim3nc", "dijkstra,random");
    assert!(!o.status.success());
    let o = run_into(dir.path(), "sim3nc", "dijkstra,random,polite");
    assert!(o.status.success(), "{}", stderr(&o));
}
