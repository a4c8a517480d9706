use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, Receiver, RecvTimeoutError};
use thiserror::Error;

use super::agent::{Agent, AgentAction, AgentTurn};
use super::record::{epoch_ms, AttemptRecord, EndReason, ToolCallLog};
use crate::env::{launch_app, restore_context, tree_digest, AppHandle, EnvError, ExitOutcome, LaunchOptions, RestoreError};
use crate::mcp::{connect, McpError, McpSession};
use crate::task::{TaskConfig, Vars};
use crate::tools::{build_registry, CallContext, ControlClient, Modality, SimulatedScreen, ToolError, ToolRegistry};
use crate::verify::{
    register_handlers, verdict, BindError, Delivered, EventSink, MilestoneMachine, PollerSet, QueryPoller, SinkHandle,
    SinkOptions, TaskVerdict,
};

/// Wait after an agent stops for in-flight probe events.
pub const DEFAULT_SETTLE: Duration = Duration::from_millis(300);
/// Time allowed for the app to exit after SIGTERM.
pub const DEFAULT_TEARDOWN_GRACE: Duration = Duration::from_secs(2);
/// Upper bound on waiting for an app's `ready_event`.
pub const DEFAULT_READY_TIMEOUT: Duration = Duration::from_secs(10);
/// Payload field in which an app may publish its control socket.
pub const CONTROL_ENDPOINT_FIELD: &str = "control_endpoint";

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("modality {0} is not permitted for this task")]
    NotPermitted(Modality),
    #[error("task failed validation: {0}")]
    Invalid(String),
    #[error("cannot prepare {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("context restore failed: {0}")]
    Restore(#[from] RestoreError),
    #[error("cannot open event sink: {0}")]
    Sink(#[from] BindError),
    #[error("app launch failed: {0}")]
    Launch(#[from] EnvError),
    #[error("app did not emit `{0}` in time")]
    ReadyTimeout(String),
    #[error("MCP server `{server}`: {source}")]
    Mcp {
        server: String,
        #[source]
        source: McpError,
    },
    #[error("GUI modality needs `app.gui` in the task")]
    NoGui,
    #[error("invalid GUI manifest: {0}")]
    Gui(String),
    #[error("tool registry: {0}")]
    Registry(#[from] ToolError),
}

#[derive(Debug, Clone)]
pub struct AttemptOptions {
    pub suite_root: PathBuf,
    /// Run output root; attempts and workspaces are created below it.
    pub out_dir: PathBuf,
    pub attempt_index: u32,
    /// Extra placeholders; they override the defaults (e.g. `EXE_DIR`).
    pub vars: Vars,
    pub settle: Duration,
    pub teardown_grace: Duration,
    pub ready_timeout: Duration,
    /// Keep the workspace of successful attempts too.
    pub keep_workspace: bool,
}

impl AttemptOptions {
    pub fn new(suite_root: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            suite_root: suite_root.into(),
            out_dir: out_dir.into(),
            attempt_index: 0,
            vars: Vars::new(),
            settle: DEFAULT_SETTLE,
            teardown_grace: DEFAULT_TEARDOWN_GRACE,
            ready_timeout: DEFAULT_READY_TIMEOUT,
            keep_workspace: false,
        }
    }
}

/// `<out>/attempts/<task>/<modality>/<n>`
pub fn attempt_dir(out: &Path, task_id: &str, modality: Modality, n: u32) -> PathBuf {
    out.join("attempts").join(task_id).join(modality.label()).join(n.to_string())
}

/// `<out>/workspaces/<task>/<modality>/<n>`
pub fn workspace_dir(out: &Path, task_id: &str, modality: Modality, n: u32) -> PathBuf {
    out.join("workspaces").join(task_id).join(modality.label()).join(n.to_string())
}

/// Resources of a live attempt. Each part cleans up on drop as well, so an
/// early return cannot leak processes or sockets.
#[derive(Default)]
struct Live {
    sink: Option<EventSink>,
    app: Option<AppHandle>,
    sessions: Vec<McpSession>,
    pollers: Option<PollerSet>,
    registry: Option<ToolRegistry>,
    control_endpoint: Option<String>,
}

/// Feeds the machine in delivery order and remembers when the goal landed.
struct Consumer {
    machine: MilestoneMachine,
    goal_at: Option<Instant>,
}

impl Consumer {
    fn feed(&mut self, d: &Delivered) {
        let was = self.machine.goal_completed();
        self.machine.advance(&d.event);
        if !was && self.machine.goal_completed() {
            self.goal_at = Some(d.arrived);
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SetupError + '_ {
    move |source| SetupError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Runs one attempt end to end: restore, sink, launch, MCP, tools, pollers,
/// agent loop, verdict, teardown. Never panics on setup trouble; that is
/// recorded as `setup_error` with `success = false`.
pub fn run_attempt(cfg: &TaskConfig, modality: Modality, agent: Box<dyn Agent>, opts: &AttemptOptions) -> AttemptRecord {
    // placeholders like ${WORKSPACE} must not depend on the cwd of whoever expands them
    let mut opts = opts.clone();
    for p in [&mut opts.out_dir, &mut opts.suite_root] {
        if let Ok(abs) = std::path::absolute(&*p) {
            *p = abs;
        }
    }
    let opts = &opts;
    let n = opts.attempt_index;
    let adir = attempt_dir(&opts.out_dir, &cfg.task_id, modality, n);
    let ws = workspace_dir(&opts.out_dir, &cfg.task_id, modality, n);
    let journal = adir.join("journal.ndjson");
    let mut consumer = Consumer {
        machine: register_handlers(cfg),
        goal_at: None,
    };
    let mut rec = AttemptRecord::from_verdict(&cfg.task_id, modality, n, verdict(&consumer.machine, false, 0, 0));
    rec.difficulty_steps = cfg.difficulty_steps;
    rec.started_at = epoch_ms();
    rec.event_journal_path = Some(journal.clone());

    let mut live = Live::default();
    let setup = setup(cfg, modality, opts, &adir, &ws, &journal, &mut live, &mut consumer, &mut rec);
    let (v, end_reason) = match setup {
        Err(e) => {
            log::warn!("{} [{modality}] #{n}: {e}", cfg.task_id);
            rec.setup_error = Some(e.to_string());
            if let Some(sink) = &live.sink {
                sink.seal();
                for d in sink.drain() {
                    consumer.feed(&d);
                }
            }
            let events = consumer.machine.events_processed();
            (verdict(&consumer.machine, false, 0, events), EndReason::SetupFailed)
        }
        Ok(()) => agent_loop(cfg, agent, opts, &mut live, consumer, &mut rec),
    };
    rec.verdict = v;
    rec.end_reason = end_reason;
    teardown(&mut live, opts, &adir, &mut rec);
    rec.ended_at = epoch_ms();

    if rec.verdict.success && !opts.keep_workspace {
        let _ = std::fs::remove_dir_all(&ws);
    }
    if std::fs::create_dir_all(&adir).is_ok() {
        if let Ok(bytes) = serde_json::to_vec_pretty(&rec) {
            let _ = std::fs::write(adir.join("record.json"), bytes);
        }
    }
    rec
}

#[allow(clippy::too_many_arguments)]
fn setup(
    cfg: &TaskConfig,
    modality: Modality,
    opts: &AttemptOptions,
    adir: &Path,
    ws: &Path,
    journal: &Path,
    live: &mut Live,
    consumer: &mut Consumer,
    rec: &mut AttemptRecord,
) -> Result<(), SetupError> {
    if !cfg.permits(modality.kind) {
        return Err(SetupError::NotPermitted(modality));
    }
    let violations = crate::task::validate_task_config(cfg, &opts.suite_root);
    if !violations.is_empty() {
        let detail: Vec<String> = violations.iter().map(|v| v.detail.clone()).collect();
        return Err(SetupError::Invalid(detail.join("; ")));
    }
    std::fs::create_dir_all(adir).map_err(io_err(adir))?;
    if ws.exists() {
        std::fs::remove_dir_all(ws).map_err(io_err(ws))?;
    }
    std::fs::create_dir_all(ws).map_err(io_err(ws))?;
    restore_context(&cfg.context_data, &opts.suite_root, ws)?;
    rec.setup_digest = Some(tree_digest(ws).map_err(io_err(ws))?);

    let mut vars = Vars::new();
    vars.set_path("WORKSPACE", ws).set_path("SUITE_ROOT", &opts.suite_root).merge(&opts.vars);
    let vars = vars.with_defaults();

    let sink = EventSink::open("127.0.0.1:0", SinkOptions::journal(journal))?;
    let endpoint = sink.endpoint().expect("listening sink").to_owned();
    live.sink = Some(sink);

    let mut app_spec = cfg.app.clone();
    if app_spec.working_dir.is_none() {
        app_spec.working_dir = Some("${WORKSPACE}".into());
    }
    let app = launch_app(
        &app_spec,
        &endpoint,
        &LaunchOptions {
            vars: vars.clone(),
            readiness: None,
        },
    )?;
    live.app = Some(app);
    wait_ready(cfg, opts, live, consumer)?;

    if modality.kind.has_mcp() {
        for server in &cfg.mcp_servers {
            let session = connect(server, &vars).map_err(|source| SetupError::Mcp {
                server: server.server_id.clone(),
                source,
            })?;
            live.sessions.push(session);
        }
    }
    let screen = if modality.kind.has_gui() {
        let manifest = cfg.app.gui.as_ref().ok_or(SetupError::NoGui)?;
        let mut screen = SimulatedScreen::new(manifest).map_err(SetupError::Gui)?;
        if let Some(ep) = &live.control_endpoint {
            screen.set_handler(Box::new(ControlClient::new(ep.clone())));
        }
        Some(screen)
    } else {
        None
    };
    live.registry = Some(build_registry(modality, &live.sessions, screen, ws)?);

    let sink = live.sink.as_ref().expect("sink opened above");
    let pollers = cfg.state_queries.iter().map(|q| QueryPoller::new(q, &vars, ws)).collect();
    live.pollers = Some(PollerSet::start(pollers, sink.handle()));
    Ok(())
}

/// Consumes events until the task's `ready_event` shows up (if it has one),
/// and picks up a published control endpoint along the way.
fn wait_ready(cfg: &TaskConfig, opts: &AttemptOptions, live: &mut Live, consumer: &mut Consumer) -> Result<(), SetupError> {
    let sink = live.sink.as_ref().expect("sink opened before launch");
    let take = |d: &Delivered, live_ep: &mut Option<String>| {
        if let Some(ep) = d.event.payload.get(CONTROL_ENDPOINT_FIELD).and_then(|v| v.as_str()) {
            *live_ep = Some(ep.to_owned());
        }
    };
    let mut endpoint = live.control_endpoint.take();
    let Some(ready) = &cfg.app.ready_event else {
        for d in sink.drain() {
            take(&d, &mut endpoint);
            consumer.feed(&d);
        }
        live.control_endpoint = endpoint;
        return Ok(());
    };
    let until = Instant::now() + opts.ready_timeout;
    loop {
        let now = Instant::now();
        if now >= until {
            return Err(SetupError::ReadyTimeout(ready.clone()));
        }
        if let Some(d) = sink.recv_timeout((until - now).min(Duration::from_millis(20))) {
            take(&d, &mut endpoint);
            consumer.feed(&d);
            if &d.event.event == ready {
                live.control_endpoint = endpoint;
                return Ok(());
            }
        } else if let Some(app) = live.app.as_mut() {
            if !app.is_running() {
                return Err(SetupError::Launch(EnvError::EarlyExit {
                    code: None,
                    stderr: String::from_utf8_lossy(&app.stderr()).into_owned(),
                }));
            }
        }
    }
}

fn spawn_consumer(
    mut consumer: Consumer,
    rx: Receiver<Delivered>,
    sink: SinkHandle,
    deadline: Instant,
    stop: Receiver<()>,
    goal_tx: crossbeam_channel::Sender<()>,
) -> JoinHandle<Consumer> {
    std::thread::Builder::new()
        .name("verdict-consumer".into())
        .spawn(move || {
            loop {
                let now = Instant::now();
                if now >= deadline {
                    sink.seal();
                    break;
                }
                select! {
                    recv(rx) -> d => match d {
                        Ok(d) => {
                            let had = consumer.goal_at.is_some();
                            consumer.feed(&d);
                            if !had && consumer.goal_at.is_some() {
                                let _ = goal_tx.try_send(());
                            }
                        }
                        Err(_) => break,
                    },
                    recv(stop) -> _ => break,
                    default(deadline - now) => {}
                }
            }
            consumer
        })
        .expect("spawn consumer thread")
}

/// What ended the wait for the agent's next action.
enum Turn {
    Action(AgentAction),
    Goal,
    Deadline,
    AgentGone,
}

fn agent_loop(
    cfg: &TaskConfig,
    agent: Box<dyn Agent>,
    opts: &AttemptOptions,
    live: &mut Live,
    mut consumer: Consumer,
    rec: &mut AttemptRecord,
) -> (TaskVerdict, EndReason) {
    let sink = live.sink.as_ref().expect("sink set up");
    let registry = live.registry.as_mut().expect("registry set up");
    let tools = Arc::new(registry.tools().to_vec());

    // everything that arrived during setup counts before the clock starts
    for d in sink.drain() {
        consumer.feed(&d);
    }
    let loop_start = Instant::now();
    let deadline = loop_start + Duration::from_secs(cfg.timeout_s);
    let ctx = CallContext::until(deadline);
    let (goal_tx, goal_rx) = bounded::<()>(1);
    if consumer.goal_at.is_some() {
        let _ = goal_tx.try_send(());
    }
    let (stop_tx, stop_rx) = bounded::<()>(1);
    let consumer_thread = spawn_consumer(consumer, sink.receiver().clone(), sink.handle(), deadline, stop_rx, goal_tx);

    let (turn_tx, turn_rx) = bounded::<AgentTurn>(1);
    let (act_tx, act_rx) = bounded::<AgentAction>(1);
    let agent_thread = std::thread::Builder::new()
        .name(format!("agent-{}", cfg.task_id))
        .spawn(move || {
            let mut agent = agent;
            while let Ok(turn) = turn_rx.recv() {
                if act_tx.send(agent.next_action(&turn)).is_err() {
                    break;
                }
            }
        })
        .expect("spawn agent thread");

    let mut history: Vec<ToolCallLog> = Vec::new();
    let mut agent_busy = false;
    let end = loop {
        if goal_rx.try_recv().is_ok() {
            break EndReason::GoalCompleted;
        }
        let now = Instant::now();
        if now >= deadline {
            break EndReason::Deadline;
        }
        if let Some(app) = live.app.as_mut() {
            if !app.is_running() {
                break EndReason::AppExited;
            }
        }
        let turn = AgentTurn {
            instruction: cfg.instruction.clone(),
            tools: tools.clone(),
            history: history.clone(),
        };
        if turn_tx.send(turn).is_err() {
            break EndReason::AgentStopped;
        }
        agent_busy = true;
        let got = select! {
            recv(act_rx) -> a => a.map_or(Turn::AgentGone, Turn::Action),
            recv(goal_rx) -> _ => Turn::Goal,
            default(deadline - now) => Turn::Deadline,
        };
        match got {
            Turn::Goal => break EndReason::GoalCompleted,
            Turn::Deadline => break EndReason::Deadline,
            Turn::AgentGone => {
                agent_busy = false;
                rec.notes.push("agent thread ended unexpectedly".into());
                break EndReason::AgentStopped;
            }
            Turn::Action(AgentAction::Stop { note }) => {
                agent_busy = false;
                rec.notes.extend(note);
                let wait = opts.settle.min(deadline.saturating_duration_since(Instant::now()));
                match goal_rx.recv_timeout(wait) {
                    Ok(()) => break EndReason::GoalCompleted,
                    Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => break EndReason::AgentStopped,
                }
            }
            Turn::Action(AgentAction::Call(call)) => {
                agent_busy = false;
                let t = Instant::now();
                let result = registry.dispatch(&call, &ctx);
                history.push(ToolCallLog {
                    call,
                    result,
                    duration_ms: t.elapsed().as_millis() as u64,
                });
            }
        }
    };
    let elapsed_ms = (loop_start.elapsed().as_millis() as u64).min(cfg.timeout_s * 1000);

    // freeze the journal, then settle the machine on what was accepted
    sink.seal();
    let _ = stop_tx.try_send(());
    let mut consumer = consumer_thread.join().expect("consumer thread");
    for d in sink.drain() {
        consumer.feed(&d);
    }
    drop(turn_tx);
    if agent_busy {
        rec.notes.push("agent turn abandoned at end of attempt".into());
    } else {
        let _ = agent_thread.join();
    }
    rec.tool_calls = history;

    let deadline_exceeded = match consumer.goal_at {
        Some(at) => at > deadline,
        None => end == EndReason::Deadline,
    };
    let end = if consumer.machine.goal_completed() && !deadline_exceeded {
        EndReason::GoalCompleted
    } else {
        end
    };
    let events = consumer.machine.events_processed();
    (verdict(&consumer.machine, deadline_exceeded, elapsed_ms, events), end)
}

fn teardown(live: &mut Live, opts: &AttemptOptions, adir: &Path, rec: &mut AttemptRecord) {
    if let Some(p) = &live.pollers {
        p.request_stop();
    }
    live.registry = None;
    for s in live.sessions.drain(..) {
        let err = s.stderr();
        s.shutdown();
        if !err.is_empty() {
            let _ = std::fs::write(adir.join(format!("mcp-{}.stderr.log", s.server_id())), err);
        }
    }
    if let Some(mut app) = live.app.take() {
        match app.terminate(opts.teardown_grace) {
            Ok(ExitOutcome::Killed) => rec.notes.push("app ignored SIGTERM and was killed".into()),
            Ok(_) => {}
            Err(e) => rec.notes.push(format!("app teardown: {e}")),
        }
        if std::fs::create_dir_all(adir).is_ok() {
            let _ = std::fs::write(adir.join("stdout.log"), app.stdout());
            let _ = std::fs::write(adir.join("stderr.log"), app.stderr());
        }
    }
    if let Some(p) = live.pollers.take() {
        p.stop();
    }
    if let Some(mut sink) = live.sink.take() {
        sink.seal();
        sink.close();
        rec.sink_stats = sink.stats();
        rec.notes.extend(sink.faults());
    }
}
