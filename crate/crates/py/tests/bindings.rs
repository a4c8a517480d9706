use std::ffi::CString;
use std::path::Path;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "whitebench").unwrap();
        whitebench_py::whitebench_py(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("wb", m).unwrap();
        let suite = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/suite");
        globals.set_item("SUITE", suite.canonicalize().unwrap().to_str().unwrap()).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn tasks_and_validation() {
    with_module(
        r#"
tasks = wb.load_suite(SUITE + "/suite.json")
assert len(tasks) == 5, tasks
t = [t for t in tasks if t.task_id == "notes-delete-01"][0]
assert t.step_ids == ["found", "deleted"]
assert t.permits("gui") and t.validate(SUITE) == []
assert not [t for t in tasks if t.task_id == "slow-timeout"][0].permits("mcp")
bad = wb.Task.from_json('{"task_id": "", "instruction": "x", "app": {"name": "a", "argv": []}, "final_goal": {"step_id": "g", "signal": "s"}}')
kinds = {v["kind"] for v in bad.validate(".")}
assert kinds == {"EmptyTaskId", "EmptyArgv"}, kinds
try:
    wb.Task.from_json('{"task_id": "x"}')
    raise SystemExit("missing fields accepted")
except ValueError as e:
    assert "instruction" in str(e) or "app" in str(e), e
try:
    wb.load_task("/nonexistent.json")
    raise SystemExit("missing file accepted")
except OSError:
    pass
"#,
    );
}

#[test]
fn machine_and_metrics() {
    with_module(
        r#"
t = [t for t in wb.load_suite(SUITE + "/suite.json") if t.task_id == "notes-delete-01"][0]
m = wb.MilestoneMachine(t)
ev = lambda e, seq, **p: {"v": 1, "source": "app", "event": e, "seq": seq, "ts_ns": 0, "payload": p}
# the goal is ordered after the search, so deleting first does not count
assert m.advance(ev("note_deleted", 1, note_id=1)) == []
assert m.advance(ev("notes_searched", 2, query="old", hits=1)) == ["found"]
assert m.advance(ev("note_deleted", 3, note_id=1)) == ["deleted"]
assert m.status()["goal_completed"] and m.events_processed == 3
v = m.verdict(deadline_exceeded=True, elapsed_ms=5)
assert not v["success"] and v["failure_reason"] == "TimeLimitExceeded", v

def rec(ok, done, total):
    return {"task_id": "t", "modality": {"kind": "gui_only", "bash_enabled": True}, "attempt_index": 0,
            "difficulty_steps": 7, "verdict": {"success": ok, "key_steps_completed": done,
            "key_steps_total": total, "wall_time_ms": 0, "event_count": 0},
            "started_at": 0, "ended_at": 0, "end_reason": "agent_stopped"}
s = wb.summarize([rec(True, 2, 2), rec(False, 1, 3), rec(False, 0, 0)])
assert s["sr"] == "33.33" and s["kscr"] == "66.67", s
assert s["by_difficulty"] == {"Medium": "33.33"}, s
csv = wb.emit_report({"suite": "x", "config": [], "attempts": [rec(True, 1, 1)]}, "csv")
assert csv.splitlines()[1].startswith("t,gui,0,true,1,1"), csv
"#,
    );
}
