mod common;

use std::process::{Command, Output};

use common::*;

fn wb(args: &[&str]) -> Output {
    Command::new(cli_exe()).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn validate_and_list_fixture_suite() {
    let manifest = suite_manifest();
    let out = wb(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("5 task(s), 0 invalid"));

    let out = wb(&["list", "--manifest", manifest.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(text(&out.stdout).lines().count(), 5);
}

#[test]
fn invalid_task_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("t.json"),
        r#"{"task_id": "loop", "instruction": "x", "app": {"name": "a", "argv": ["true"]},
            "key_steps": [{"step_id": "a", "signal": "x", "ordered_after": "b"},
                          {"step_id": "b", "signal": "y", "ordered_after": "a"}],
            "final_goal": {"step_id": "g", "signal": "z"}}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("suite.json"), r#"{"suite_name": "bad", "tasks": ["t.json"]}"#).unwrap();
    let out = wb(&["validate", "--manifest", dir.path().join("suite.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("OrderCycle"), "{}", text(&out.stdout));
}

#[test]
fn unreadable_manifest_exits_2() {
    let out = wb(&["list", "--manifest", "/nonexistent/suite.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("error"));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let exe_dir = fixture_exe().parent().unwrap().display().to_string();
    let out = wb(&[
        "run",
        "--manifest",
        suite_manifest().to_str().unwrap(),
        "--modality",
        "mcp",
        "--attempts",
        "2",
        "--task",
        "notes-create-01",
        "--out",
        out_dir.to_str().unwrap(),
        "--var",
        &format!("EXE_DIR={exe_dir}"),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("| mcp | 2 | 100.00 | 100.00 |"), "{}", text(&out.stdout));

    let csv = wb(&["report", "--in", out_dir.to_str().unwrap(), "--format", "csv"]);
    assert!(csv.status.success());
    let body = text(&csv.stdout);
    assert_eq!(body.lines().count(), 3);
    assert!(body.lines().nth(1).unwrap().starts_with("notes-create-01,mcp,0,true,2,2,"));

    let json = wb(&["report", "--in", out_dir.join("report.json").to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["metrics"]["sr"], "100.00");
}

#[test]
fn unknown_task_filter_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wb(&[
        "run",
        "--manifest",
        suite_manifest().to_str().unwrap(),
        "--task",
        "nope",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
