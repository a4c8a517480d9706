#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use whitebench::mcp::McpServerConfig;
use whitebench::run::{plan_agent, run_attempt, Agent, AttemptOptions, AttemptRecord};
use whitebench::task::{load_suite_manifest, TaskConfig, Vars};
use whitebench::tools::{Modality, ModalityKind};
use whitebench::verify::{FailureReason, ProbeEvent, TaskVerdict};

pub fn fixture_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_wb-fixture"))
}

pub fn cli_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_whitebench"))
}

pub fn suite_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/suite")
}

pub fn suite_manifest() -> PathBuf {
    suite_root().join("suite.json")
}

pub fn plans_dir() -> PathBuf {
    suite_root().join("plans")
}

/// `EXE_DIR` points at the test build's binaries.
pub fn fixture_vars() -> Vars {
    let mut v = Vars::new();
    v.set_path("EXE_DIR", fixture_exe().parent().unwrap());
    v
}

pub fn load_task(id: &str) -> TaskConfig {
    let suite = load_suite_manifest(&suite_manifest()).unwrap();
    suite
        .load_tasks()
        .unwrap()
        .into_iter()
        .map(|t| t.config)
        .find(|c| c.task_id == id)
        .unwrap_or_else(|| panic!("no fixture task {id}"))
}

pub fn attempt_options(out: &Path, n: u32) -> AttemptOptions {
    let mut o = AttemptOptions::new(suite_root(), out);
    o.attempt_index = n;
    o.vars = fixture_vars();
    o
}

pub fn planned(task: &TaskConfig, modality: Modality) -> Box<dyn Agent> {
    plan_agent(&plans_dir(), &task.task_id, modality)
}

pub fn run_planned(task: &TaskConfig, modality: Modality, out: &Path, n: u32) -> AttemptRecord {
    run_attempt(task, modality, planned(task, modality), &attempt_options(out, n))
}

/// Runs `jobs` over `threads` workers, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

pub fn stub_server(flags: &[&str]) -> McpServerConfig {
    let mut argv = vec![fixture_exe().display().to_string(), "serve-mcp".to_string()];
    argv.extend(flags.iter().map(|s| s.to_string()));
    McpServerConfig::new("notes", argv)
}

/// `name -> raw schema text` as printed by the stub server itself.
pub fn stub_schemas() -> BTreeMap<String, String> {
    let out = std::process::Command::new(fixture_exe())
        .args(["serve-mcp", "--dump-schemas"])
        .output()
        .unwrap();
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| {
            let (n, s) = l.split_once('\t').unwrap();
            (n.to_owned(), s.to_owned())
        })
        .collect()
}

pub const STUB_TOOLS: [&str; 7] = [
    "add_note",
    "delete_note",
    "search_notes",
    "get_state",
    "fail_on_purpose",
    "sleep_tool",
    "transient_flash",
];

/// Tool names a modality must advertise against the fixture server `notes`.
pub fn expected_tools(m: Modality) -> Vec<String> {
    let mut v = Vec::new();
    if m.kind.has_gui() {
        v.push("computer".to_owned());
    }
    if m.bash_enabled {
        v.push("bash".to_owned());
        v.push("str_replace_editor".to_owned());
    }
    if m.kind.has_mcp() {
        v.extend(STUB_TOOLS.iter().map(|t| format!("notes__{t}")));
    }
    v.sort();
    v
}

pub fn synthetic(
    modality: ModalityKind,
    success: bool,
    done: u32,
    total: u32,
    engine: Option<FailureReason>,
    annotated: Option<FailureReason>,
    steps: u32,
) -> AttemptRecord {
    let v = TaskVerdict {
        success,
        key_steps_completed: done,
        key_steps_total: total,
        failure_reason: engine,
        wall_time_ms: 0,
        event_count: 0,
    };
    let mut r = AttemptRecord::from_verdict("t", Modality::new(modality, true), 0, v);
    r.annotated_failure_reason = annotated;
    r.difficulty_steps = steps;
    r
}

/// A task config with three key steps in a chain plus a goal, used by
/// replay and machine properties.
pub fn chain_task() -> TaskConfig {
    serde_json::from_value(json!({
        "task_id": "chain",
        "instruction": "x",
        "app": {"name": "a", "argv": ["true"]},
        "key_steps": [
            {"step_id": "s1", "signal": "e1"},
            {"step_id": "s2", "signal": "e2", "ordered_after": "s1"},
            {"step_id": "s3", "signal": "e3", "match": [{"path": "n", "op": "number_in_range", "value": [2, 4]}]}
        ],
        "final_goal": {"step_id": "g", "signal": "done", "ordered_after": "s2"}
    }))
    .unwrap()
}

pub const CHAIN_EVENTS: [&str; 5] = ["e1", "e2", "e3", "done", "noise"];

pub fn event_line(source: &str, event: &str, seq: u64, n: i64) -> String {
    let p: Value = json!({"n": n});
    ProbeEvent::new(source, event, seq, seq * 1000, p.as_object().unwrap().clone()).to_line()
}

/// Relative path -> content for every regular file, `Some(target)` for
/// links, recursively. The oracle side of the restore property.
#[derive(Debug, PartialEq, Eq)]
pub enum Node {
    Dir,
    File(Vec<u8>, u32),
    Link(PathBuf),
}

pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Node> {
    use std::os::unix::fs::PermissionsExt;
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let e = e.unwrap();
            let p = e.path();
            let rel = p.strip_prefix(root).unwrap().to_owned();
            let meta = std::fs::symlink_metadata(&p).unwrap();
            if meta.file_type().is_symlink() {
                out.insert(rel, Node::Link(std::fs::read_link(&p).unwrap()));
            } else if meta.is_dir() {
                out.insert(rel, Node::Dir);
                stack.push(p);
            } else {
                out.insert(rel, Node::File(std::fs::read(&p).unwrap(), meta.permissions().mode() & 0o777));
            }
        }
    }
    out
}
