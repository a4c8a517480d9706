//! Test fixture: a small white-box notes app, a stdio MCP server for it,
//! and a state dump command.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{json, Map, Value};
use whitebench::tools::{ControlClient, ControlReply, ControlRequest};

#[derive(Parser)]
#[command(name = "wb-fixture", about = "Fixture app and MCP server for whitebench tests")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the notes app: probe events out, control socket in.
    App {
        #[arg(long, default_value = "notes.json")]
        store: PathBuf,
        /// Where to publish the control endpoint.
        #[arg(long, default_value = "app.ctl")]
        ctl_file: PathBuf,
        #[arg(long, default_value = "MCPWORLD_PROBE_ENDPOINT")]
        probe_env: String,
        #[arg(long, default_value = "notes-app")]
        source: String,
        /// Keep running after SIGTERM.
        #[arg(long)]
        ignore_term: bool,
        /// Exit at once with this code.
        #[arg(long)]
        exit_code: Option<i32>,
        /// Exit by itself after this many milliseconds.
        #[arg(long)]
        exit_after_ms: Option<u64>,
    },
    /// Serve the notes tools over stdio MCP.
    ServeMcp {
        /// Forward to the app published here; without it, notes live in memory.
        #[arg(long)]
        ctl_file: Option<PathBuf>,
        /// Read requests but never answer.
        #[arg(long)]
        mute: bool,
        /// Answer with bytes that are not JSON-RPC.
        #[arg(long)]
        broken: bool,
        /// Advertise no tools.
        #[arg(long)]
        no_tools: bool,
        /// Print `name<TAB>schema` for every tool and exit.
        #[arg(long)]
        dump_schemas: bool,
    },
    /// Print the store as `{"note_count": n, "notes": [...]}`.
    DumpState {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoreFile {
    next_id: u64,
    notes: Vec<Note>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Note {
    note_id: u64,
    title: String,
    body: String,
    created_at: u64,
}

impl StoreFile {
    fn load(path: &Path) -> Result<Self, String> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| format!("corrupt store {}: {e}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(format!("cannot read {}: {e}", path.display())),
        }
    }

    /// Replace-on-write so readers only ever see committed states.
    fn save(&self, path: &Path) -> Result<(), String> {
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| e.to_string())?;
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| format!("cannot write {}: {e}", path.display()))
    }

    fn state(&self) -> Value {
        let mut notes = self.notes.clone();
        notes.sort_by_key(|n| n.note_id);
        json!({"note_count": notes.len(), "notes": notes})
    }
}

struct Probe {
    stream: Option<TcpStream>,
    source: String,
    seq: u64,
    epoch: Instant,
}

impl Probe {
    fn connect(env_var: &str, source: &str) -> Self {
        let stream = std::env::var(env_var)
            .ok()
            .and_then(|ep| ep.strip_prefix("tcp:").map(str::to_owned))
            .and_then(|addr| TcpStream::connect(addr).ok());
        if let Some(s) = &stream {
            let _ = s.set_nodelay(true);
        }
        Self {
            stream,
            source: source.to_owned(),
            seq: 0,
            epoch: Instant::now(),
        }
    }

    fn emit(&mut self, event: &str, payload: Value) {
        let Some(stream) = self.stream.as_mut() else { return };
        self.seq += 1;
        let line = json!({
            "v": 1,
            "source": self.source,
            "event": event,
            "seq": self.seq,
            "ts_ns": self.epoch.elapsed().as_nanos() as u64,
            "payload": payload,
        });
        let mut text = line.to_string();
        text.push('\n');
        if stream.write_all(text.as_bytes()).is_err() {
            self.stream = None;
        }
    }
}

/// Notes logic shared by the app and the in-memory MCP mode.
struct Notes {
    store: StoreFile,
    path: Option<PathBuf>,
    probe: Option<Probe>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn str_arg<'a>(args: &'a Map<String, Value>, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

impl Notes {
    fn emit(&mut self, event: &str, payload: Value) {
        if let Some(p) = self.probe.as_mut() {
            p.emit(event, payload);
        }
    }

    fn commit(&mut self) -> Result<(), String> {
        match &self.path {
            Some(p) => self.store.save(p),
            None => Ok(()),
        }
    }

    fn next_id(&mut self) -> u64 {
        self.store.next_id += 1;
        self.store.next_id
    }

    fn run(&mut self, command: &str, args: &Map<String, Value>) -> Result<String, String> {
        match command {
            "ping" => Ok("pong".into()),
            "add_note" => {
                let title = str_arg(args, "title").unwrap_or_default().trim().to_owned();
                if title.is_empty() {
                    return Err("title must not be empty".into());
                }
                let body = str_arg(args, "body").unwrap_or_default().to_owned();
                let id = self.next_id();
                self.store.notes.push(Note {
                    note_id: id,
                    title: title.clone(),
                    body,
                    created_at: now_ms(),
                });
                self.commit()?;
                self.emit("note_added", json!({"note_id": id, "title": title}));
                Ok(format!("created note {id}"))
            }
            "delete_note" => {
                let id = match args.get("note_id") {
                    Some(Value::Number(n)) => n.as_u64(),
                    Some(Value::String(s)) => s.trim().parse().ok(),
                    _ => None,
                }
                .ok_or("note_id must be a number")?;
                let pos = self.store.notes.iter().position(|n| n.note_id == id).ok_or(format!("no note {id}"))?;
                let note = self.store.notes.remove(pos);
                self.commit()?;
                self.emit("note_deleted", json!({"note_id": id, "title": note.title}));
                Ok(format!("deleted note {id}"))
            }
            "search_notes" => {
                let q = str_arg(args, "query").unwrap_or_default().to_lowercase();
                let hits: Vec<Value> = self
                    .store
                    .notes
                    .iter()
                    .filter(|n| n.title.to_lowercase().contains(&q) || n.body.to_lowercase().contains(&q))
                    .map(|n| json!({"note_id": n.note_id, "title": n.title}))
                    .collect();
                self.emit("notes_searched", json!({"query": q, "hits": hits.len()}));
                Ok(Value::Array(hits).to_string())
            }
            "get_state" => Ok(self.store.state().to_string()),
            "transient_flash" => {
                // lives only in memory: added and removed without a commit
                let title = str_arg(args, "title").filter(|t| !t.is_empty()).unwrap_or("ghost").to_owned();
                let id = self.next_id();
                self.emit("note_added", json!({"note_id": id, "title": title}));
                std::thread::sleep(Duration::from_millis(5));
                self.emit("note_deleted", json!({"note_id": id, "title": title}));
                Ok(format!("flashed note {id}"))
            }
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

static TERMINATED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_term(_sig: libc::c_int) {
    TERMINATED.store(true, Ordering::SeqCst);
}

fn install_term_handler(ignore: bool) {
    let handler = if ignore { libc::SIG_IGN } else { on_term as extern "C" fn(libc::c_int) as libc::sighandler_t };
    unsafe {
        libc::signal(libc::SIGTERM, handler);
    }
}

fn run_app(
    store: PathBuf,
    ctl_file: PathBuf,
    probe_env: String,
    source: String,
    ignore_term: bool,
    exit_code: Option<i32>,
    exit_after_ms: Option<u64>,
) -> i32 {
    if let Some(code) = exit_code {
        eprintln!("wb-fixture app: exiting with configured code {code}");
        return code;
    }
    install_term_handler(ignore_term);
    let mut notes = match StoreFile::load(&store) {
        Ok(s) => Notes {
            store: s,
            path: Some(store),
            probe: Some(Probe::connect(&probe_env, &source)),
        },
        Err(e) => {
            eprintln!("wb-fixture app: {e}");
            return 2;
        }
    };
    let listener = match TcpListener::bind("127.0.0.1:0") {
        Ok(l) => l,
        Err(e) => {
            eprintln!("wb-fixture app: cannot bind control socket: {e}");
            return 2;
        }
    };
    let endpoint = format!("tcp:{}", listener.local_addr().expect("bound"));
    if let Err(e) = std::fs::write(&ctl_file, &endpoint) {
        eprintln!("wb-fixture app: cannot write {}: {e}", ctl_file.display());
    }
    listener.set_nonblocking(true).expect("nonblocking listener");
    notes.emit("app_started", json!({"control_endpoint": endpoint, "pid": std::process::id()}));
    println!("listening on {endpoint}");

    let started = Instant::now();
    loop {
        if TERMINATED.load(Ordering::SeqCst) {
            notes.emit("app_stopping", json!({}));
            return 0;
        }
        if exit_after_ms.is_some_and(|ms| started.elapsed() >= Duration::from_millis(ms)) {
            return 0;
        }
        match listener.accept() {
            Ok((stream, _)) => serve_control(stream, &mut notes),
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(_) => std::thread::sleep(Duration::from_millis(2)),
        }
    }
}

fn serve_control(stream: TcpStream, notes: &mut Notes) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while matches!(reader.read_line(&mut line), Ok(n) if n > 0) {
        let reply = match serde_json::from_str::<ControlRequest>(line.trim_end()) {
            Ok(req) => match notes.run(&req.command, &req.args) {
                Ok(output) => ControlReply {
                    ok: true,
                    output,
                    error: String::new(),
                },
                Err(error) => ControlReply {
                    ok: false,
                    output: String::new(),
                    error,
                },
            },
            Err(e) => ControlReply {
                ok: false,
                output: String::new(),
                error: format!("bad request: {e}"),
            },
        };
        let mut text = serde_json::to_string(&reply).expect("reply serializes");
        text.push('\n');
        if writer.write_all(text.as_bytes()).is_err() {
            break;
        }
        line.clear();
    }
}

/// Schemas are sent byte-for-byte as written here, odd spacing included.
const TOOLS: [(&str, &str, &str); 7] = [
    (
        "add_note",
        "Create a note with a title and optional body.",
        r#"{"type": "object", "properties": {"title": {"type": "string", "minLength": 1}, "body": {"type": "string"}}, "required": ["title"]}"#,
    ),
    (
        "delete_note",
        "Delete a note by id.",
        r#"{"type":"object","properties":{"note_id":{"type":"integer"}},"required":["note_id"]}"#,
    ),
    (
        "search_notes",
        "Find notes whose title or body contains the query.",
        r#"{"required":["query"],  "type":"object", "properties":{"query":{"type":"string"}}}"#,
    ),
    ("get_state", "Return every note and the note count.", r#"{"type":"object","properties":{}}"#),
    ("fail_on_purpose", "Always fails.", r#"{"type":"object"}"#),
    (
        "sleep_tool",
        "Sleep for the given number of seconds.",
        r#"{"type":"object","properties":{"seconds":{"type":"number","minimum":0}}}"#,
    ),
    (
        "transient_flash",
        "Create and delete a note in memory without saving it.",
        r#"{"type":"object","properties":{"title":{"type":"string"}}}"#,
    ),
];
const PAGE_SIZE: usize = 4;

#[derive(Serialize)]
struct WireTool<'a> {
    name: &'a str,
    description: &'a str,
    #[serde(rename = "inputSchema")]
    input_schema: &'a RawValue,
}

enum Backend {
    Remote(ControlClient),
    Local(Notes),
}

impl Backend {
    fn run(&mut self, command: &str, args: &Map<String, Value>) -> Result<String, String> {
        match self {
            Backend::Remote(c) => {
                let reply = c.send(&ControlRequest {
                    command: command.to_owned(),
                    args: args.clone(),
                })?;
                if reply.ok {
                    Ok(reply.output)
                } else {
                    Err(reply.error)
                }
            }
            Backend::Local(n) => n.run(command, args),
        }
    }
}

fn rpc_result(id: &Value, result: Value) -> String {
    json!({"jsonrpc": "2.0", "id": id, "result": result}).to_string()
}

fn rpc_error(id: &Value, code: i64, message: &str) -> String {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}}).to_string()
}

fn list_tools(id: &Value, params: &Value, no_tools: bool) -> String {
    let start = params
        .get("cursor")
        .and_then(Value::as_str)
        .and_then(|c| c.strip_prefix("page-"))
        .and_then(|n| n.parse::<usize>().ok())
        .unwrap_or(0);
    let all: &[(&str, &str, &str)] = if no_tools { &[] } else { &TOOLS };
    let page: Vec<WireTool> = all
        .iter()
        .skip(start)
        .take(PAGE_SIZE)
        .map(|(name, description, schema)| WireTool {
            name,
            description,
            input_schema: serde_json::from_str(schema).expect("static schema is JSON"),
        })
        .collect();
    let tools = serde_json::to_string(&page).expect("tools serialize");
    let next = start + PAGE_SIZE;
    let cursor = if next < all.len() { format!(r#","nextCursor":"page-{next}""#) } else { String::new() };
    format!(r#"{{"jsonrpc":"2.0","id":{id},"result":{{"tools":{tools}{cursor}}}}}"#)
}

fn call_tool(id: &Value, params: &Value, backend: &mut Backend) -> String {
    let name = params.get("name").and_then(Value::as_str).unwrap_or_default();
    let args = params.get("arguments").and_then(Value::as_object).cloned().unwrap_or_default();
    let outcome = match name {
        "fail_on_purpose" => Err("failure requested".to_owned()),
        "sleep_tool" => {
            let secs = args.get("seconds").and_then(Value::as_f64).unwrap_or(0.0).clamp(0.0, 3600.0);
            std::thread::sleep(Duration::from_secs_f64(secs));
            Ok(format!("slept {secs} s"))
        }
        n if TOOLS.iter().any(|t| t.0 == n) => backend.run(n, &args),
        other => return rpc_error(id, -32602, &format!("unknown tool: {other}")),
    };
    let (text, is_error) = match outcome {
        Ok(t) => (t, false),
        Err(e) => (e, true),
    };
    rpc_result(id, json!({"content": [{"type": "text", "text": text}], "isError": is_error}))
}

fn serve_mcp(ctl_file: Option<PathBuf>, mute: bool, broken: bool, no_tools: bool) -> i32 {
    let mut backend = match ctl_file.as_deref().map(std::fs::read_to_string) {
        Some(Ok(ep)) => Backend::Remote(ControlClient::new(ep.trim())),
        Some(Err(e)) => {
            eprintln!("wb-fixture serve-mcp: cannot read control file: {e}");
            return 2;
        }
        None => Backend::Local(Notes {
            store: StoreFile::default(),
            path: None,
            probe: None,
        }),
    };
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if mute || line.trim().is_empty() {
            continue;
        }
        if broken {
            let _ = writeln!(out, "<<this is not json-rpc>>");
            let _ = out.flush();
            continue;
        }
        let Ok(msg) = serde_json::from_str::<Value>(&line) else {
            let _ = writeln!(out, "{}", rpc_error(&Value::Null, -32700, "parse error"));
            let _ = out.flush();
            continue;
        };
        let Some(id) = msg.get("id").cloned() else {
            continue; // notification
        };
        let params = msg.get("params").cloned().unwrap_or(Value::Null);
        let reply = match msg.get("method").and_then(Value::as_str).unwrap_or_default() {
            "initialize" => rpc_result(
                &id,
                json!({
                    "protocolVersion": "2024-11-05",
                    "capabilities": {"tools": {}},
                    "serverInfo": {"name": "wb-fixture", "version": env!("CARGO_PKG_VERSION")}
                }),
            ),
            "ping" => rpc_result(&id, json!({})),
            "tools/list" => list_tools(&id, &params, no_tools),
            "tools/call" => call_tool(&id, &params, &mut backend),
            other => rpc_error(&id, -32601, &format!("method not found: {other}")),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    0
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::App {
            store,
            ctl_file,
            probe_env,
            source,
            ignore_term,
            exit_code,
            exit_after_ms,
        } => run_app(store, ctl_file, probe_env, source, ignore_term, exit_code, exit_after_ms),
        Cmd::ServeMcp {
            dump_schemas: true, ..
        } => {
            for (name, _, schema) in TOOLS {
                println!("{name}\t{schema}");
            }
            0
        }
        Cmd::ServeMcp {
            ctl_file,
            mute,
            broken,
            no_tools,
            ..
        } => serve_mcp(ctl_file, mute, broken, no_tools),
        Cmd::DumpState { store } => match StoreFile::load(&store) {
            Ok(s) => {
                println!("{}", s.state());
                0
            }
            Err(e) => {
                eprintln!("{e}");
                1
            }
        },
    };
    std::process::exit(code);
}
