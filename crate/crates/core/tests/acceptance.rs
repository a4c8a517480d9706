//! Acceptance checks. Runs without the libtest harness so each criterion
//! reports exactly one line, with its runtime against the budget.

mod common;

use std::cell::Cell;
use std::io::Write;
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::json;
use whitebench::env::{restore_context, tree_digest};
use whitebench::mcp::{connect, McpError};
use whitebench::metrics::{bucket_difficulty, failure_table, summarize, DifficultyLevel};
use whitebench::run::{make_scripted_agent, run_attempt, PlanStep, ScriptedPlan};
use whitebench::task::{ContextDataEntry, Vars};
use whitebench::tools::{build_registry, CallContext, Modality, ModalityKind, SimulatedScreen, ToolCall};
use whitebench::verify::{register_handlers, replay_verdict, verdict, EventSink, FailureReason, SinkOptions};

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn ac1_metric_arithmetic() -> Outcome {
    const N: u32 = 603;
    let columns = [
        (ModalityKind::Hybrid, 0.7512, "75.12"),
        (ModalityKind::GuiOnly, 0.7065, "70.65"),
        (ModalityKind::McpOnly, 0.5323, "53.23"),
    ];
    let mut all = Vec::new();
    let mut shown = Vec::new();
    for (kind, p, want) in columns {
        let k = (p * N as f64).round() as u32;
        // the derived count must itself reproduce the published figure
        ensure(format!("{:.2}", k as f64 * 100.0 / N as f64) == want, format!("count {k} inconsistent with {want}"))?;
        let recs: Vec<_> = (0..N).map(|i| synthetic(kind, i < k, 0, 0, None, None, 5)).collect();
        let got = summarize(&recs).map_err(|e| e.to_string())?.sr_percent.to_string();
        ensure(got == want, format!("{kind:?}: {k}/{N} rendered {got}, want {want}"))?;
        shown.push(format!("{k}/{N}={got}"));
        all.extend(recs);
    }
    let s = summarize(&all).map_err(|e| e.to_string())?;
    for (kind, _, want) in columns {
        let got = s.by_modality[&Modality::new(kind, true).label()].sr.to_string();
        ensure(got == want, format!("by_modality {kind:?} rendered {got}"))?;
    }
    Ok(shown.join(", "))
}

fn ac2_difficulty() -> Outcome {
    use DifficultyLevel::*;
    let cases = [(3, Easy), (7, Medium), (12, Hard), (5, Easy), (10, Medium), (11, Hard)];
    for (n, want) in cases {
        ensure(bucket_difficulty(n) == want, format!("{n} -> {:?}, want {want:?}", bucket_difficulty(n)))?;
    }
    Ok("3,7,12,5,10,11 -> Easy,Medium,Hard,Easy,Medium,Hard".into())
}

fn ac3_failure_table() -> Outcome {
    use FailureReason::*;
    // engine-assigned time limit; everything else comes from annotation
    let mut recs = Vec::new();
    let g = ModalityKind::GuiOnly;
    recs.extend((0..43).map(|_| synthetic(g, false, 0, 1, None, Some(LimitedReasoningCapability), 5)));
    recs.extend((0..11).map(|_| synthetic(g, false, 0, 1, Some(TimeLimitExceeded), None, 5)));
    recs.extend((0..3).map(|_| synthetic(g, false, 0, 1, None, Some(ImpreciseCursorPositioning), 5)));
    recs.push(synthetic(g, false, 0, 1, None, Some(UiElementNotFound), 5));
    recs.push(synthetic(g, false, 0, 1, None, None, 5));
    recs.extend((0..544).map(|_| synthetic(g, true, 1, 1, None, None, 5)));
    let table = failure_table(&recs);
    let want = [
        (LimitedReasoningCapability, 72.88),
        (TimeLimitExceeded, 18.64),
        (ImpreciseCursorPositioning, 5.08),
        (UiElementNotFound, 1.69),
        (Others, 1.69),
    ];
    ensure(table.len() == want.len(), format!("unexpected reasons in table: {table:?}"))?;
    let mut shown = Vec::new();
    for (reason, pct) in want {
        let got = table.get(&reason).map(|p| p.as_f64()).ok_or(format!("{reason} missing"))?;
        ensure((got - pct).abs() <= 0.01 + 1e-9, format!("{reason}: {got} vs {pct}"))?;
        shown.push(format!("{}={got:.2}", reason.name()));
    }
    Ok(shown.join(" "))
}

fn ac4_transient_signal() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let probe = load_task("flash-probe");
    let polled = load_task("flash-polled");
    // half through GUI clicks, half through the MCP tool
    let jobs: Vec<(bool, u32)> = (0..100).flat_map(|n| [(true, n), (false, n)]).collect();
    let recs = parallel_map(&jobs, 16, |&(use_probe, n)| {
        let kind = if n % 2 == 0 { ModalityKind::GuiOnly } else { ModalityKind::McpOnly };
        let task = if use_probe { &probe } else { &polled };
        (use_probe, run_planned(task, Modality::new(kind, false), out.path(), n))
    });
    let probe_hits = recs.iter().filter(|(p, r)| *p && r.success()).count();
    let poll_hits = recs.iter().filter(|(p, r)| !*p && r.success()).count();
    let setup_errors: Vec<_> = recs.iter().filter_map(|(_, r)| r.setup_error.clone()).collect();
    ensure(setup_errors.is_empty(), format!("setup errors: {:?}", &setup_errors[..setup_errors.len().min(3)]))?;
    // the negative control only counts if the poller was really sampling
    let polled_ran = recs
        .iter()
        .filter(|(p, _)| !*p)
        .filter(|(_, r)| {
            r.event_journal_path
                .as_ref()
                .and_then(|j| std::fs::read_to_string(j).ok())
                .is_some_and(|t| t.contains(r#""source":"query:store""#))
        })
        .count();
    ensure(polled_ran == 100, format!("poller produced no events in {} runs", 100 - polled_ran))?;
    let detail = format!("probe completed {probe_hits}/100, polling completed {poll_hits}/100");
    ensure(probe_hits == 100 && poll_hits == 0, detail.clone())?;
    Ok(detail)
}

#[derive(Debug, Clone)]
struct Journal {
    /// (connection, event kind, payload n, seq)
    events: Vec<(usize, usize, i64, u64)>,
    malformed: Vec<(usize, usize)>,
    deadline_exceeded: bool,
}

fn journal_strategy() -> impl Strategy<Value = Journal> {
    (1usize..=3)
        .prop_flat_map(|conns| {
            (
                prop::collection::vec((0..conns, 0..CHAIN_EVENTS.len(), 0i64..6, 1u64..60), 1..40),
                prop::collection::vec((0..conns, 0usize..3), 0..40),
                any::<bool>(),
            )
        })
        .prop_map(|(events, mut malformed, deadline_exceeded)| {
            malformed.truncate(events.len() / 9);
            Journal {
                events,
                malformed,
                deadline_exceeded,
            }
        })
}

const BAD_LINES: [&str; 3] = [
    "{not json",
    r#"{"v":2,"source":"x","event":"e1","seq":1,"ts_ns":0,"payload":{}}"#,
    r#"{"v":1,"source":"x","event":"e1","seq":1}"#,
];

/// Returns how many malformed lines went over the wire.
fn replay_case(j: &Journal) -> Result<usize, String> {
    let cfg = chain_task();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.ndjson");
    let mut sink = EventSink::open("127.0.0.1:0", SinkOptions::journal(&path)).map_err(|e| e.to_string())?;
    let addr = sink.endpoint().unwrap().strip_prefix("tcp:").unwrap().to_owned();
    let n_conn = j.events.iter().map(|e| e.0).chain(j.malformed.iter().map(|m| m.0)).max().unwrap() + 1;
    let mut streams: Vec<TcpStream> = (0..n_conn).map(|_| TcpStream::connect(&addr).unwrap()).collect();
    let mut total = 0;
    let mut injected = 0;
    let mut bad = j.malformed.iter().peekable();
    for (i, &(c, kind, n, seq)) in j.events.iter().enumerate() {
        let line = event_line(&format!("src{c}"), CHAIN_EVENTS[kind], seq, n);
        streams[c].write_all(format!("{line}\n").as_bytes()).unwrap();
        total += 1;
        if i % 9 == 8 {
            if let Some(&(bc, which)) = bad.next() {
                streams[bc].write_all(format!("{}\n", BAD_LINES[which]).as_bytes()).unwrap();
                total += 1;
                injected += 1;
            }
        }
    }
    drop(streams);
    let until = Instant::now() + Duration::from_secs(5);
    while sink.stats().lines < total {
        if Instant::now() > until {
            return Err(format!("sink saw {} of {total} lines", sink.stats().lines));
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    sink.seal();
    let mut m = register_handlers(&cfg);
    for d in sink.drain() {
        m.advance(&d.event);
    }
    sink.close();
    let live = verdict(&m, j.deadline_exceeded, 1234, m.events_processed());
    let (replayed, _) = replay_verdict(&cfg, &path, j.deadline_exceeded, 1234).map_err(|e| e.to_string())?;
    ensure(live == replayed, format!("live {live:?} != replay {replayed:?}"))?;
    Ok(injected)
}

fn ac5_replay_fidelity() -> Outcome {
    let cases = Cell::new(0u32);
    let malformed = Cell::new(0usize);
    let lines = Cell::new(0usize);
    runner(200)
        .run(&journal_strategy(), |j| {
            let injected = replay_case(&j).map_err(TestCaseError::fail)?;
            cases.set(cases.get() + 1);
            malformed.set(malformed.get() + injected);
            lines.set(lines.get() + j.events.len() + injected);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let (lines, malformed) = (lines.get(), malformed.get());
    Ok(format!(
        "{} journals, {lines} lines, {malformed} malformed ({:.1}%), every verdict replayed identically",
        cases.get(),
        100.0 * malformed as f64 / lines as f64
    ))
}

#[derive(Debug, Clone)]
enum Item {
    File(Vec<u8>, u32),
    Link(String),
}

fn tree_strategy() -> impl Strategy<Value = Vec<(Vec<u8>, Item)>> {
    let item = prop_oneof![
        8 => (prop::collection::vec(any::<u8>(), 0..48), prop::sample::select(vec![0o644u32, 0o600, 0o755])).prop_map(|(b, m)| Item::File(b, m)),
        1 => "[a-f]{1,3}".prop_map(Item::Link),
    ];
    prop::collection::vec((prop::collection::vec(0u8..8, 1..=3), item), 0..200)
}

fn materialize(root: &std::path::Path, items: &[(Vec<u8>, Item)]) -> usize {
    use std::os::unix::fs::PermissionsExt;
    std::fs::create_dir_all(root).unwrap();
    let mut made = 0;
    for (parts, item) in items {
        let rel: PathBuf = parts.iter().map(|p| ((b'a' + p) as char).to_string()).collect();
        let path = root.join(&rel);
        // skip paths that collide with something already placed
        let blocked = rel.ancestors().skip(1).any(|a| {
            let p = root.join(a);
            std::fs::symlink_metadata(&p).is_ok_and(|m| !m.is_dir())
        });
        if blocked || std::fs::symlink_metadata(&path).is_ok() {
            continue;
        }
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        match item {
            Item::File(bytes, mode) => {
                std::fs::write(&path, bytes).unwrap();
                std::fs::set_permissions(&path, std::fs::Permissions::from_mode(*mode)).unwrap();
            }
            Item::Link(target) => std::os::unix::fs::symlink(target, &path).unwrap(),
        }
        made += 1;
    }
    made
}

fn ac6_restore_mirror() -> Outcome {
    let files = Cell::new(0usize);
    runner(100)
        .run(&(tree_strategy(), tree_strategy()), |(src, dst)| {
            let dir = tempfile::tempdir().unwrap();
            let suite = dir.path().join("suite");
            let ws = dir.path().join("ws");
            files.set(files.get() + materialize(&suite.join("data"), &src));
            materialize(&ws.join("target"), &dst);
            let entries = [ContextDataEntry {
                from: "data".into(),
                to: "/target".into(),
            }];
            restore_context(&entries, &suite, &ws).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let want = snapshot(&suite.join("data"));
            prop_assert_eq!(&snapshot(&ws.join("target")), &want);
            let d1 = tree_digest(&ws).unwrap();
            let again = restore_context(&entries, &suite, &ws).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!((again.files_copied, again.files_deleted, again.bytes_written), (0, 0, 0));
            prop_assert_eq!(&snapshot(&ws.join("target")), &want);
            prop_assert_eq!(tree_digest(&ws).unwrap(), d1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("100 tree pairs, {} source entries mirrored; second restore a no-op", files.get()))
}

fn ac7_modality_soundness() -> Outcome {
    let task = load_task("flash-probe");
    let gui = task.app.gui.clone().ok_or("fixture has no gui")?;
    let session = connect(&stub_server(&[]), &Vars::new()).map_err(|e| e.to_string())?;
    let mut universe: Vec<String> = expected_tools(Modality::new(ModalityKind::Hybrid, true));
    universe.extend(["notes__missing", "other__get_state", "Computer", "", "notes_get_state"].map(String::from));
    let ws = tempfile::tempdir().unwrap();
    let ctx = CallContext::until(Instant::now() + Duration::from_secs(10));
    for m in Modality::all() {
        let screen = m.kind.has_gui().then(|| SimulatedScreen::new(&gui).unwrap());
        let mut reg = build_registry(m, std::slice::from_ref(&session), screen, ws.path()).map_err(|e| e.to_string())?;
        let mut names: Vec<String> = reg.names().into_iter().map(str::to_owned).collect();
        names.sort();
        ensure(names == expected_tools(m), format!("{m}: advertised {names:?}"))?;
        for name in universe.iter().filter(|n| !names.contains(n)) {
            let call = ToolCall {
                name: name.clone(),
                args: json!({}),
                call_id: "x".into(),
            };
            let r = reg.dispatch(&call, &ctx);
            ensure(r.is_error(), format!("{m}: `{name}` was not rejected: {r:?}"))?;
        }
    }
    session.shutdown();

    // inside a live attempt: rejected calls first, then the real work
    let out = tempfile::tempdir().unwrap();
    let configs: Vec<Modality> = Modality::all().collect();
    let recs = parallel_map(&configs, 6, |&m| {
        let advertised = expected_tools(m);
        let mut steps: Vec<PlanStep> = universe
            .iter()
            .filter(|n| !advertised.contains(n))
            .map(|n| PlanStep::call(n.clone(), json!({})))
            .collect();
        if m.kind.has_mcp() {
            steps.push(PlanStep::call("notes__transient_flash", json!({"title": "ghost"})));
        } else {
            steps.push(PlanStep::call("computer", json!({"action": "left_click", "coordinate": [100, 25]})));
            steps.push(PlanStep::call("computer", json!({"action": "type", "text": "ghost"})));
            steps.push(PlanStep::call("computer", json!({"action": "left_click", "coordinate": [170, 105]})));
        }
        let rejected = steps.len() - if m.kind.has_mcp() { 1 } else { 3 };
        let agent = make_scripted_agent(ScriptedPlan::new(steps).unwrap());
        (m, rejected, run_attempt(&task, m, Box::new(agent), &attempt_options(out.path(), 0)))
    });
    for (m, rejected, rec) in &recs {
        let errors = rec.tool_calls.iter().take(*rejected).filter(|c| c.result.is_error()).count();
        ensure(errors == *rejected, format!("{m}: {errors}/{rejected} rejected"))?;
        ensure(rec.success(), format!("{m}: attempt did not complete after rejected calls: {rec:?}"))?;
    }
    Ok("6 configurations: exact tool sets, off-set names rejected, attempts continue".into())
}

fn ac8_timeout() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let task = load_task("slow-timeout");
    let t0 = Instant::now();
    let rec = run_planned(&task, Modality::new(ModalityKind::GuiOnly, true), out.path(), 0);
    let wall = t0.elapsed();
    ensure(!rec.success(), "stalling attempt succeeded")?;
    ensure(
        rec.failure_reason() == Some(FailureReason::TimeLimitExceeded),
        format!("failure reason {:?}", rec.failure_reason()),
    )?;
    ensure(wall <= Duration::from_secs(3), format!("wall time {wall:?}"))?;
    Ok(format!("TimeLimitExceeded after {} ms wall (agent time {} ms)", wall.as_millis(), rec.verdict.wall_time_ms))
}

fn ac9_mcp_conformance() -> Outcome {
    let schemas = stub_schemas();
    let s = connect(&stub_server(&[]), &Vars::new()).map_err(|e| e.to_string())?;
    let tools = s.list_tools().map_err(|e| e.to_string())?;
    let names: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
    ensure(names == STUB_TOOLS, format!("tools/list gave {names:?}"))?;
    for t in &tools {
        ensure(t.input_schema.as_str() == schemas[&t.name], format!("schema bytes differ for {}", t.name))?;
    }
    let r = s.call_tool("add_note", json!({"title": "a", "body": "b"})).map_err(|e| e.to_string())?;
    ensure(r.text() == "created note 1", format!("add_note: {r:?}"))?;
    let state: serde_json::Value = serde_json::from_str(&s.call_tool("get_state", json!({})).map_err(|e| e.to_string())?.text())
        .map_err(|e| e.to_string())?;
    ensure(state["note_count"] == 1, format!("get_state: {state}"))?;
    ensure(s.call_tool("fail_on_purpose", json!({})).map_err(|e| e.to_string())?.is_error(), "fail_on_purpose not an error")?;
    ensure(matches!(s.call_tool("nope", json!({})), Err(McpError::UnknownTool(_))), "unknown tool accepted")?;
    s.shutdown();

    ensure(
        matches!(connect(&stub_server(&["--broken"]), &Vars::new()), Err(McpError::Protocol(_))),
        "broken server not a protocol error",
    )?;
    let t0 = Instant::now();
    let mute = connect(&stub_server(&["--mute"]), &Vars::new());
    let waited = t0.elapsed().as_millis();
    ensure(matches!(mute, Err(McpError::HandshakeTimeout(5000))), format!("mute server gave {:?}", mute.err()))?;
    ensure((4500..=5500).contains(&waited), format!("handshake timeout after {waited} ms"))?;
    Ok(format!("7 tools, schemas byte-identical, mute server timed out after {waited} ms"))
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { id: 1, name: "metric arithmetic", budget: Duration::from_secs(1), check: ac1_metric_arithmetic },
    Criterion { id: 2, name: "difficulty bucketing", budget: Duration::from_secs(1), check: ac2_difficulty },
    Criterion { id: 3, name: "failure table", budget: Duration::from_secs(1), check: ac3_failure_table },
    Criterion { id: 4, name: "transient signal detection", budget: Duration::from_secs(60), check: ac4_transient_signal },
    Criterion { id: 5, name: "replay fidelity", budget: Duration::from_secs(30), check: ac5_replay_fidelity },
    Criterion { id: 6, name: "restore mirror", budget: Duration::from_secs(60), check: ac6_restore_mirror },
    Criterion { id: 7, name: "modality soundness", budget: Duration::from_secs(5), check: ac7_modality_soundness },
    Criterion { id: 8, name: "timeout enforcement", budget: Duration::from_secs(10), check: ac8_timeout },
    Criterion { id: 9, name: "MCP protocol conformance", budget: Duration::from_secs(15), check: ac9_mcp_conformance },
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in &CRITERIA {
        let tag = format!("ac{}", c.id);
        if !filters.is_empty() && !filters.iter().any(|f| tag == *f || c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(c.check));
        let took = t0.elapsed();
        let (ok, detail) = match res {
            Ok(Ok(d)) if took <= c.budget => (true, d),
            Ok(Ok(d)) => (false, format!("{d}; over budget")),
            Ok(Err(e)) => (false, e),
            Err(p) => (
                false,
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "AC{} {} {}: {detail} ({} ms, budget {} ms)",
            c.id,
            if ok { "PASS" } else { "FAIL" },
            c.name,
            took.as_millis(),
            c.budget.as_millis()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
