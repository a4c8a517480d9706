use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, SendTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProbeEvent;

/// Queue bound; a probe waits at most [`ENQUEUE_WAIT`] for room.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;
pub const ENQUEUE_WAIT: Duration = Duration::from_millis(50);
/// Lines longer than this are treated as malformed.
pub const MAX_LINE_BYTES: usize = 1 << 20;
/// Journal lines starting with this byte are harness notes, not events.
pub const JOURNAL_NOTE_PREFIX: u8 = b'#';

const INJECT_CONNECTION: u64 = u64::MAX;
const MAX_FAULT_NOTES: usize = 1_000;

#[derive(Debug, Error)]
pub enum BindError {
    #[error("invalid bind spec `{0}`")]
    InvalidSpec(String),
    #[error("cannot bind {addr}: {source}")]
    Io {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot open journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("seq regression from `{origin}`: {got} after {last}")]
    SeqRegression { origin: String, last: u64, got: u64 },
    #[error("delivery queue full; event dropped")]
    Overflow,
    #[error("sink is sealed")]
    Sealed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkStats {
    pub connections: u64,
    pub lines: u64,
    pub delivered: u64,
    pub malformed: u64,
    pub seq_regressions: u64,
    pub overflowed: u64,
    pub query_errors: u64,
    pub after_seal: u64,
}

/// An accepted event and when the sink received it.
#[derive(Debug, Clone)]
pub struct Delivered {
    pub event: ProbeEvent,
    pub arrived: Instant,
}

#[derive(Debug, Clone)]
pub struct SinkOptions {
    pub journal: Option<PathBuf>,
    pub capacity: usize,
}

impl Default for SinkOptions {
    fn default() -> Self {
        Self {
            journal: None,
            capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl SinkOptions {
    pub fn journal(path: impl Into<PathBuf>) -> Self {
        Self {
            journal: Some(path.into()),
            ..Self::default()
        }
    }
}

struct State {
    journal: Option<File>,
    last_seq: HashMap<(u64, String), u64>,
    stats: SinkStats,
    faults: Vec<String>,
    sealed: bool,
}

struct Shared {
    state: Mutex<State>,
    tx: Sender<Delivered>,
    epoch: Instant,
    closing: AtomicBool,
    next_connection: AtomicU64,
    streams: Mutex<Vec<TcpStream>>,
}

/// Cloneable ingestion side of a sink, for pollers and probe readers.
#[derive(Clone)]
pub struct SinkHandle(Arc<Shared>);

impl State {
    fn journal_line(&mut self, line: &[u8]) {
        if let Some(j) = self.journal.as_mut() {
            let ok = j.write_all(line).and_then(|_| if line.ends_with(b"\n") { Ok(()) } else { j.write_all(b"\n") });
            if let Err(e) = ok {
                self.journal = None;
                self.fault(format!("journal write failed: {e}"));
            }
        }
    }

    fn fault(&mut self, msg: String) {
        log::debug!("sink fault: {msg}");
        if self.faults.len() < MAX_FAULT_NOTES {
            self.faults.push(msg);
        }
    }
}

impl SinkHandle {
    /// Nanoseconds since the sink opened; used for harness-made events.
    pub fn now_ns(&self) -> u64 {
        self.0.epoch.elapsed().as_nanos() as u64
    }

    /// Validates, journals and enqueues one line received on `connection`.
    /// The journal receives the raw bytes even when the line is rejected.
    pub fn ingest(&self, connection: u64, line: &[u8]) -> Result<ProbeEvent, IngestError> {
        let mut st = self.0.state.lock().unwrap();
        if st.sealed {
            st.stats.after_seal += 1;
            return Err(IngestError::Sealed);
        }
        st.stats.lines += 1;
        st.journal_line(line);
        let parsed = if line.len() > MAX_LINE_BYTES {
            Err(format!("line of {} bytes exceeds limit", line.len()))
        } else {
            ProbeEvent::parse(line).map_err(|e| e.0)
        };
        let event = match parsed {
            Ok(ev) => ev,
            Err(msg) => {
                st.stats.malformed += 1;
                st.fault(format!("malformed event: {msg}"));
                return Err(IngestError::Malformed(msg));
            }
        };
        let key = (connection, event.source.clone());
        if let Some(&last) = st.last_seq.get(&key) {
            if event.seq <= last {
                st.stats.seq_regressions += 1;
                let err = IngestError::SeqRegression {
                    origin: event.source,
                    last,
                    got: event.seq,
                };
                st.fault(err.to_string());
                return Err(err);
            }
        }
        st.last_seq.insert(key, event.seq);
        let item = Delivered {
            event: event.clone(),
            arrived: Instant::now(),
        };
        match self.0.tx.send_timeout(item, ENQUEUE_WAIT) {
            Ok(()) => {
                st.stats.delivered += 1;
                Ok(event)
            }
            Err(SendTimeoutError::Timeout(_) | SendTimeoutError::Disconnected(_)) => {
                st.stats.overflowed += 1;
                st.fault(format!("queue full; dropped {} seq {}", event.source, event.seq));
                Err(IngestError::Overflow)
            }
        }
    }

    /// Feeds a harness-made event (e.g. from a state query) through the
    /// same path as probe lines.
    pub fn inject(&self, event: &ProbeEvent) -> Result<ProbeEvent, IngestError> {
        self.ingest(INJECT_CONNECTION, event.to_line().as_bytes())
    }

    /// Records a non-fatal fault, e.g. a failed state query, in the stats,
    /// the fault list and the journal (as a note line replay ignores).
    pub fn query_fault(&self, query_id: &str, msg: &str) {
        let mut st = self.0.state.lock().unwrap();
        st.stats.query_errors += 1;
        let note = format!("query `{query_id}` failed: {msg}");
        let line = format!("{} {}\n", JOURNAL_NOTE_PREFIX as char, note.replace('\n', " "));
        if !st.sealed {
            st.journal_line(line.as_bytes());
        }
        st.fault(note);
    }

    pub fn stats(&self) -> SinkStats {
        self.0.state.lock().unwrap().stats.clone()
    }

    pub fn faults(&self) -> Vec<String> {
        self.0.state.lock().unwrap().faults.clone()
    }

    /// Stops accepting events; later lines are counted but neither
    /// journaled nor delivered.
    pub fn seal(&self) {
        let mut st = self.0.state.lock().unwrap();
        st.sealed = true;
        if let Some(j) = st.journal.as_mut() {
            let _ = j.flush();
        }
    }
}

/// Receives probe connections and hands validated events to one consumer.
pub struct EventSink {
    endpoint: Option<String>,
    addr: Option<SocketAddr>,
    handle: SinkHandle,
    rx: Receiver<Delivered>,
    accept: Option<JoinHandle<()>>,
    readers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl std::fmt::Debug for EventSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventSink").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

/// `"127.0.0.1:0"` or `"tcp:127.0.0.1:0"`.
pub fn open_sink(bind_spec: &str) -> Result<EventSink, BindError> {
    EventSink::open(bind_spec, SinkOptions::default())
}

fn parse_bind(spec: &str) -> Result<SocketAddr, BindError> {
    let addr = spec.strip_prefix("tcp:").unwrap_or(spec);
    addr.parse().map_err(|_| BindError::InvalidSpec(spec.to_owned()))
}

impl EventSink {
    fn build(opts: &SinkOptions) -> Result<(SinkHandle, Receiver<Delivered>), BindError> {
        let journal = match &opts.journal {
            Some(path) => Some(File::create(path).map_err(|source| BindError::Journal {
                path: path.clone(),
                source,
            })?),
            None => None,
        };
        let (tx, rx) = bounded(opts.capacity.max(1));
        let shared = Shared {
            state: Mutex::new(State {
                journal,
                last_seq: HashMap::new(),
                stats: SinkStats::default(),
                faults: Vec::new(),
                sealed: false,
            }),
            tx,
            epoch: Instant::now(),
            closing: AtomicBool::new(false),
            next_connection: AtomicU64::new(1),
            streams: Mutex::new(Vec::new()),
        };
        Ok((SinkHandle(Arc::new(shared)), rx))
    }

    pub fn open(bind_spec: &str, opts: SinkOptions) -> Result<Self, BindError> {
        let want = parse_bind(bind_spec)?;
        let listener = TcpListener::bind(want).map_err(|source| BindError::Io {
            addr: want.to_string(),
            source,
        })?;
        let addr = listener.local_addr().map_err(|source| BindError::Io {
            addr: want.to_string(),
            source,
        })?;
        let (handle, rx) = Self::build(&opts)?;
        let readers = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let handle = handle.clone();
            let readers = readers.clone();
            std::thread::Builder::new()
                .name("sink-accept".into())
                .spawn(move || accept_loop(listener, handle, readers))
                .expect("spawn accept thread")
        };
        Ok(Self {
            endpoint: Some(format!("tcp:{addr}")),
            addr: Some(addr),
            handle,
            rx,
            accept: Some(accept),
            readers,
        })
    }

    /// A sink with no listener, fed only through [`ingest`](Self::ingest)
    /// and [`inject`](SinkHandle::inject). Used for replay.
    pub fn offline(opts: SinkOptions) -> Result<Self, BindError> {
        let (handle, rx) = Self::build(&opts)?;
        Ok(Self {
            endpoint: None,
            addr: None,
            handle,
            rx,
            accept: None,
            readers: Arc::new(Mutex::new(Vec::new())),
        })
    }

    /// `tcp:HOST:PORT`, the value handed to the app's probe env var.
    pub fn endpoint(&self) -> Option<&str> {
        self.endpoint.as_deref()
    }

    pub fn handle(&self) -> SinkHandle {
        self.handle.clone()
    }

    /// Ingests one line as if received on a single local connection.
    pub fn ingest(&self, line: &[u8]) -> Result<ProbeEvent, IngestError> {
        self.handle.ingest(0, line)
    }

    pub fn receiver(&self) -> &Receiver<Delivered> {
        &self.rx
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Delivered> {
        self.rx.recv_timeout(timeout).ok()
    }

    /// Everything queued right now, in delivery order.
    pub fn drain(&self) -> Vec<Delivered> {
        self.rx.try_iter().collect()
    }

    pub fn stats(&self) -> SinkStats {
        self.handle.stats()
    }

    pub fn faults(&self) -> Vec<String> {
        self.handle.faults()
    }

    pub fn seal(&self) {
        self.handle.seal();
    }

    /// Stops the listener, disconnects probes and joins every thread.
    /// Queued events stay receivable. Idempotent.
    pub fn close(&mut self) {
        let shared = &self.handle.0;
        if shared.closing.swap(true, Ordering::SeqCst) {
            return;
        }
        if let (Some(addr), Some(accept)) = (self.addr, self.accept.take()) {
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
            let _ = accept.join();
        }
        for s in shared.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        let readers: Vec<_> = self.readers.lock().unwrap().drain(..).collect();
        for r in readers {
            let _ = r.join();
        }
        if let Some(j) = shared.state.lock().unwrap().journal.as_mut() {
            let _ = j.flush();
        }
    }
}

impl Drop for EventSink {
    fn drop(&mut self) {
        self.close();
    }
}

fn accept_loop(listener: TcpListener, handle: SinkHandle, readers: Arc<Mutex<Vec<JoinHandle<()>>>>) {
    let shared = handle.0.clone();
    for stream in listener.incoming() {
        if shared.closing.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let conn = shared.next_connection.fetch_add(1, Ordering::SeqCst);
        if let Ok(clone) = stream.try_clone() {
            shared.streams.lock().unwrap().push(clone);
        }
        shared.state.lock().unwrap().stats.connections += 1;
        let h = handle.clone();
        let reader = std::thread::Builder::new()
            .name(format!("sink-conn-{conn}"))
            .spawn(move || read_connection(stream, conn, h));
        if let Ok(r) = reader {
            readers.lock().unwrap().push(r);
        }
    }
}

fn read_connection(stream: TcpStream, conn: u64, handle: SinkHandle) {
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => break,
            Ok(_) => {
                if buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                let _ = handle.ingest(conn, &buf);
            }
        }
    }
}
