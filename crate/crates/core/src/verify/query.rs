use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{Map, Value};
use thiserror::Error;

use super::predicate::lookup;
use super::{ProbeEvent, SinkHandle};
use crate::process::{self, RunError};
use crate::task::{QueryKind, QueryTarget, StateQuerySpec, Vars};

/// Upper bound on one `command_json` query run.
pub const QUERY_COMMAND_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("output is not JSON: {0}")]
    NotJson(String),
    #[error("command failed ({status}): {stderr}")]
    Command { status: String, stderr: String },
    #[error("cannot run command: {0}")]
    Spawn(String),
    #[error("command timed out")]
    TimedOut,
    #[error("query target does not match its kind")]
    BadTarget,
}

#[derive(Debug, Clone)]
enum Target {
    File(PathBuf),
    Argv(Vec<String>),
}

/// Samples one state query and remembers the last payload so that only
/// changes produce events.
#[derive(Debug, Clone)]
pub struct QueryPoller {
    spec: StateQuerySpec,
    target: Option<Target>,
    cwd: PathBuf,
    last: Option<Map<String, Value>>,
    seq: u64,
}

impl QueryPoller {
    /// Placeholders in the target are expanded with `vars`; relative file
    /// paths and commands resolve against `cwd`.
    pub fn new(spec: &StateQuerySpec, vars: &Vars, cwd: &Path) -> Self {
        let target = match (&spec.kind, &spec.target) {
            (QueryKind::FileJson, QueryTarget::Path(p)) => Some(Target::File(cwd.join(vars.expand(p)))),
            (QueryKind::CommandJson, QueryTarget::Argv(a)) if !a.is_empty() => Some(Target::Argv(vars.expand_all(a))),
            _ => None,
        };
        Self {
            spec: spec.clone(),
            target,
            cwd: cwd.to_owned(),
            last: None,
            seq: 0,
        }
    }

    pub fn spec(&self) -> &StateQuerySpec {
        &self.spec
    }

    pub fn source(&self) -> String {
        format!("query:{}", self.spec.query_id)
    }

    pub fn interval(&self) -> Duration {
        Duration::from_millis(self.spec.interval_ms)
    }

    fn read_document(&self) -> Result<Value, QueryError> {
        let bytes = match self.target.as_ref().ok_or(QueryError::BadTarget)? {
            Target::File(path) => std::fs::read(path).map_err(|e| QueryError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
            Target::Argv(argv) => {
                let mut cmd = Command::new(&argv[0]);
                cmd.args(&argv[1..]).current_dir(&self.cwd);
                let out = process::run_with_timeout(cmd, QUERY_COMMAND_TIMEOUT).map_err(|e| match e {
                    RunError::TimedOut => QueryError::TimedOut,
                    other => QueryError::Spawn(other.to_string()),
                })?;
                if !out.status.success() {
                    return Err(QueryError::Command {
                        status: out.status_label(),
                        stderr: String::from_utf8_lossy(&out.stderr).trim().to_owned(),
                    });
                }
                out.stdout
            }
        };
        serde_json::from_slice(&bytes).map_err(|e| QueryError::NotJson(e.to_string()))
    }

    /// Runs the query once and applies the extract rules. With no rules an
    /// object document is the payload as-is; anything else lands under
    /// `value`. Missing sources extract as `null`.
    pub fn sample(&self) -> Result<Map<String, Value>, QueryError> {
        let doc = self.read_document()?;
        if self.spec.extract.is_empty() {
            return Ok(match doc {
                Value::Object(m) => m,
                other => Map::from_iter([("value".to_owned(), other)]),
            });
        }
        let root = match doc {
            Value::Object(m) => m,
            other => Map::from_iter([("value".to_owned(), other)]),
        };
        Ok(self
            .spec
            .extract
            .iter()
            .map(|r| (r.field.clone(), lookup(&root, &r.source).cloned().unwrap_or(Value::Null)))
            .collect())
    }

    /// One edge-triggered poll: an event only when the payload differs from
    /// the previous successful poll.
    pub fn poll(&mut self, ts_ns: u64) -> Result<Option<ProbeEvent>, QueryError> {
        let payload = self.sample()?;
        if self.last.as_ref() == Some(&payload) {
            return Ok(None);
        }
        self.last = Some(payload.clone());
        self.seq += 1;
        Ok(Some(ProbeEvent::new(self.source(), &self.spec.emit_as, self.seq, ts_ns, payload)))
    }
}

/// Polls once and returns the synthesized events (zero or one).
pub fn poll_state_query(poller: &mut QueryPoller, ts_ns: u64) -> Result<Vec<ProbeEvent>, QueryError> {
    Ok(poller.poll(ts_ns)?.into_iter().collect())
}

/// Background threads running pollers at their intervals until stopped.
#[derive(Debug)]
pub struct PollerSet {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl PollerSet {
    /// Each poller gets its own thread; the first poll happens immediately.
    pub fn start(pollers: Vec<QueryPoller>, sink: SinkHandle) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let threads = pollers
            .into_iter()
            .map(|p| {
                let stop = stop.clone();
                let sink = sink.clone();
                std::thread::Builder::new()
                    .name(format!("poll-{}", p.spec.query_id))
                    .spawn(move || run_poller(p, sink, stop))
                    .expect("spawn poller thread")
            })
            .collect();
        Self { stop, threads }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    /// Asks every poller to finish without waiting for them.
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for PollerSet {
    fn drop(&mut self) {
        self.halt();
    }
}

fn run_poller(mut p: QueryPoller, sink: SinkHandle, stop: Arc<AtomicBool>) {
    let interval = p.interval();
    let mut next = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match p.poll(sink.now_ns()) {
            Ok(Some(ev)) => {
                let _ = sink.inject(&ev);
            }
            Ok(None) => {}
            Err(e) => sink.query_fault(&p.spec.query_id, &e.to_string()),
        }
        next += interval;
        loop {
            let now = Instant::now();
            if stop.load(Ordering::SeqCst) || now >= next {
                break;
            }
            std::thread::sleep((next - now).min(Duration::from_millis(5)));
        }
        // skip ticks we fell behind on instead of bursting
        if Instant::now() > next + interval {
            next = Instant::now();
        }
    }
}
