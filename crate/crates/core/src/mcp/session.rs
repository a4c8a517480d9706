use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, RecvTimeoutError, Sender};
use log::{debug, warn};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::types::{InputSchema, McpServerConfig, ToolDescriptor, ToolOrigin, ToolResult};
use crate::process::{self, Capture};
use crate::task::Vars;

pub const PROTOCOL_VERSION: &str = "2024-11-05";
const EXCERPT_LEN: usize = 120;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum McpError {
    #[error("cannot spawn MCP server `{program}`: {reason}")]
    Spawn { program: String, reason: String },
    #[error("MCP handshake timed out after {0} ms")]
    HandshakeTimeout(u64),
    #[error("MCP protocol error: {0}")]
    Protocol(String),
    #[error("MCP session closed")]
    SessionClosed,
    #[error("unknown MCP tool `{0}`")]
    UnknownTool(String),
    #[error("MCP call timed out after {0} ms")]
    CallTimeout(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Connecting,
    Ready,
    Closed,
}

type Reply = Result<String, McpError>;

struct Inner {
    server_id: String,
    state: Mutex<SessionState>,
    writer: Mutex<Option<ChildStdin>>,
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    fault: Mutex<Option<String>>,
    next_id: AtomicU64,
    child: Mutex<Option<Child>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    stderr: Capture,
    tools: Mutex<Option<Vec<ToolDescriptor>>>,
    call_timeout: Duration,
}

/// A live connection to one MCP server over stdio. Clones share the session.
#[derive(Clone)]
pub struct McpSession {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for McpSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McpSession")
            .field("server_id", &self.inner.server_id)
            .field("state", &self.state())
            .finish()
    }
}

#[derive(Deserialize)]
struct RpcError {
    code: i64,
    message: String,
}

#[derive(Deserialize)]
struct RpcResponse<T> {
    #[serde(default = "Option::default")]
    result: Option<T>,
    #[serde(default)]
    error: Option<RpcError>,
}

#[derive(Deserialize)]
struct WireTool {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(rename = "inputSchema")]
    input_schema: InputSchema,
}

#[derive(Deserialize)]
struct ListToolsResult {
    tools: Vec<WireTool>,
    #[serde(rename = "nextCursor", default)]
    next_cursor: Option<String>,
}

#[derive(Deserialize)]
struct WireContent {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    data: Option<String>,
}

#[derive(Deserialize)]
struct CallToolResult {
    #[serde(default)]
    content: Vec<WireContent>,
    #[serde(rename = "isError", default)]
    is_error: bool,
}

fn excerpt(bytes: &str) -> String {
    let mut end = bytes.len().min(EXCERPT_LEN);
    while !bytes.is_char_boundary(end) {
        end -= 1;
    }
    bytes[..end].to_owned()
}

/// Spawns the server and completes the `initialize` handshake.
pub fn connect(cfg: &McpServerConfig, vars: &Vars) -> Result<McpSession, McpError> {
    let argv = vars.expand_all(&cfg.argv);
    let Some((program, args)) = argv.split_first() else {
        return Err(McpError::Spawn {
            program: String::new(),
            reason: "empty argv".into(),
        });
    };
    let mut cmd = Command::new(program);
    cmd.args(args)
        .envs(cfg.env.iter().map(|(k, v)| (k, vars.expand(v))))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    process::own_process_group(&mut cmd);
    let mut child = cmd.spawn().map_err(|e| McpError::Spawn {
        program: program.clone(),
        reason: e.to_string(),
    })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (stderr, stderr_h) = Capture::drain(child.stderr.take().expect("piped stderr"));

    let inner = Arc::new(Inner {
        server_id: cfg.server_id.clone(),
        state: Mutex::new(SessionState::Connecting),
        writer: Mutex::new(Some(stdin)),
        pending: Mutex::new(HashMap::new()),
        fault: Mutex::new(None),
        next_id: AtomicU64::new(1),
        child: Mutex::new(Some(child)),
        threads: Mutex::new(vec![stderr_h]),
        stderr,
        tools: Mutex::new(None),
        call_timeout: Duration::from_millis(cfg.call_timeout_ms),
    });
    let reader = {
        let inner = Arc::clone(&inner);
        std::thread::spawn(move || read_loop(&inner, stdout))
    };
    inner.threads.lock().unwrap().push(reader);
    let session = McpSession { inner };

    let params = json!({
        "protocolVersion": PROTOCOL_VERSION,
        "capabilities": {},
        "clientInfo": {"name": "whitebench", "version": env!("CARGO_PKG_VERSION")},
    });
    let handshake = session
        .request("initialize", Some(params), Duration::from_millis(cfg.connect_timeout_ms))
        .and_then(|raw| parse_result::<Value>(&raw));
    match handshake {
        Ok(Ok(_)) => {}
        Ok(Err(msg)) => {
            session.shutdown();
            return Err(McpError::Protocol(format!("initialize rejected: {msg}")));
        }
        Err(McpError::CallTimeout(ms)) => {
            session.shutdown();
            return Err(McpError::HandshakeTimeout(ms));
        }
        Err(e) => {
            session.shutdown();
            return Err(e);
        }
    }
    session.notify("notifications/initialized", None)?;
    *session.inner.state.lock().unwrap() = SessionState::Ready;
    Ok(session)
}

/// Returns `Ok(Ok(result))`, `Ok(Err(rpc error text))`, or a protocol error.
fn parse_result<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<Result<T, String>, McpError> {
    let resp: RpcResponse<T> = serde_json::from_str(raw)
        .map_err(|e| McpError::Protocol(format!("bad response ({e}): {}", excerpt(raw))))?;
    match (resp.result, resp.error) {
        (_, Some(err)) => Ok(Err(format!("{} (code {})", err.message, err.code))),
        (Some(r), None) => Ok(Ok(r)),
        (None, None) => Err(McpError::Protocol(format!("response without result: {}", excerpt(raw)))),
    }
}

fn read_loop(inner: &Inner, stdout: ChildStdout) {
    let mut reader = BufReader::new(stdout);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                inner.poison(format!("unreadable output: {e}"));
                break;
            }
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        let msg: Value = match serde_json::from_str(text) {
            Ok(v @ Value::Object(_)) => v,
            _ => {
                inner.poison(format!("invalid message framing: {}", excerpt(text)));
                break;
            }
        };
        if let Some(method) = msg.get("method").and_then(Value::as_str) {
            match msg.get("id") {
                None => debug!("[{}] notification {method} ignored", inner.server_id),
                Some(id) => {
                    // server-initiated requests are outside the supported subset
                    let reply = json!({
                        "jsonrpc": "2.0",
                        "id": id,
                        "error": {"code": -32601, "message": "method not found"},
                    });
                    let _ = inner.write_line(&reply.to_string());
                }
            }
            continue;
        }
        let id = msg.get("id").and_then(Value::as_u64);
        let waiter = id.and_then(|id| inner.pending.lock().unwrap().remove(&id));
        match waiter {
            Some(tx) => {
                let _ = tx.send(Ok(text.to_owned()));
            }
            None => {
                inner.poison(format!("response id {:?} matches no pending request", msg.get("id")));
                break;
            }
        }
    }
    // EOF or fault: wake every waiter
    inner.pending.lock().unwrap().clear();
}

impl Inner {
    fn poison(&self, why: String) {
        warn!("[{}] {why}", self.server_id);
        let mut fault = self.fault.lock().unwrap();
        if fault.is_none() {
            *fault = Some(why.clone());
        }
        drop(fault);
        for (_, tx) in self.pending.lock().unwrap().drain() {
            let _ = tx.send(Err(McpError::Protocol(why.clone())));
        }
    }

    fn write_line(&self, line: &str) -> Result<(), McpError> {
        let mut guard = self.writer.lock().unwrap();
        let w = guard.as_mut().ok_or(McpError::SessionClosed)?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(|_| McpError::SessionClosed)
    }

    fn closed_error(&self) -> McpError {
        match self.fault.lock().unwrap().clone() {
            Some(f) => McpError::Protocol(f),
            None => McpError::SessionClosed,
        }
    }
}

impl McpSession {
    pub fn server_id(&self) -> &str {
        &self.inner.server_id
    }

    pub fn state(&self) -> SessionState {
        *self.inner.state.lock().unwrap()
    }

    /// Everything the server wrote to stderr so far.
    pub fn stderr(&self) -> Vec<u8> {
        self.inner.stderr.snapshot()
    }

    fn request(&self, method: &str, params: Option<Value>, timeout: Duration) -> Result<String, McpError> {
        if self.state() == SessionState::Closed {
            return Err(McpError::SessionClosed);
        }
        if let Some(f) = self.inner.fault.lock().unwrap().clone() {
            return Err(McpError::Protocol(f));
        }
        let id = self.inner.next_id.fetch_add(1, Ordering::SeqCst);
        let mut msg = json!({"jsonrpc": "2.0", "id": id, "method": method});
        if let Some(p) = params {
            msg["params"] = p;
        }
        let (tx, rx) = bounded(1);
        self.inner.pending.lock().unwrap().insert(id, tx);
        if let Err(e) = self.inner.write_line(&msg.to_string()) {
            self.inner.pending.lock().unwrap().remove(&id);
            return Err(e);
        }
        match rx.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.inner.pending.lock().unwrap().remove(&id);
                Err(McpError::CallTimeout(timeout.as_millis() as u64))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.inner.closed_error()),
        }
    }

    fn notify(&self, method: &str, params: Option<Value>) -> Result<(), McpError> {
        let mut msg = json!({"jsonrpc": "2.0", "method": method});
        if let Some(p) = params {
            msg["params"] = p;
        }
        self.inner.write_line(&msg.to_string())
    }

    fn ensure_ready(&self) -> Result<(), McpError> {
        match self.state() {
            SessionState::Ready => Ok(()),
            SessionState::Closed => Err(McpError::SessionClosed),
            SessionState::Connecting => Err(McpError::Protocol("session not initialized".into())),
        }
    }

    /// Discovers the server's tools, following pagination cursors. Schemas
    /// are kept byte-for-byte; order is the server's.
    pub fn list_tools(&self) -> Result<Vec<ToolDescriptor>, McpError> {
        self.ensure_ready()?;
        let mut out = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let params = cursor.as_ref().map(|c| json!({"cursor": c}));
            let raw = self.request("tools/list", params, self.inner.call_timeout)?;
            let page: ListToolsResult = parse_result(&raw)?.map_err(McpError::Protocol)?;
            out.extend(page.tools.into_iter().map(|t| ToolDescriptor {
                name: t.name,
                description: t.description.unwrap_or_default(),
                input_schema: t.input_schema,
                origin: ToolOrigin::Mcp(self.inner.server_id.clone()),
            }));
            match page.next_cursor {
                Some(c) if !c.is_empty() => cursor = Some(c),
                _ => break,
            }
        }
        *self.inner.tools.lock().unwrap() = Some(out.clone());
        Ok(out)
    }

    /// Invokes a discovered tool and maps the reply onto a [`ToolResult`]:
    /// text parts become `output`, the first image becomes `base64_image`,
    /// and server-side failures land in `error`.
    pub fn call_tool(&self, name: &str, args: Value) -> Result<ToolResult, McpError> {
        self.call_tool_within(name, args, None)
    }

    /// [`call_tool`](Self::call_tool) with the configured call timeout
    /// lowered to `limit`, if given.
    pub fn call_tool_within(&self, name: &str, args: Value, limit: Option<Duration>) -> Result<ToolResult, McpError> {
        self.ensure_ready()?;
        let known = {
            let cached = self.inner.tools.lock().unwrap().clone();
            match cached {
                Some(tools) => tools,
                None => self.list_tools()?,
            }
        };
        if !known.iter().any(|t| t.name == name) {
            return Err(McpError::UnknownTool(name.to_owned()));
        }
        let params = json!({"name": name, "arguments": args});
        let timeout = limit.map_or(self.inner.call_timeout, |l| l.min(self.inner.call_timeout));
        let raw = self.request("tools/call", Some(params), timeout)?;
        match parse_result::<CallToolResult>(&raw)? {
            Ok(result) => Ok(map_call_result(result)),
            Err(rpc) => Ok(ToolResult::error(rpc)),
        }
    }

    /// Closes the transport and reaps the child. Safe to call repeatedly;
    /// in-flight calls resolve as [`McpError::SessionClosed`].
    pub fn shutdown(&self) {
        {
            let mut state = self.inner.state.lock().unwrap();
            if *state == SessionState::Closed {
                return;
            }
            *state = SessionState::Closed;
        }
        self.inner.writer.lock().unwrap().take();
        self.inner.pending.lock().unwrap().clear();
        if let Some(mut child) = self.inner.child.lock().unwrap().take() {
            match process::wait_until(&mut child, Duration::from_millis(200)) {
                Ok(Some(_)) => process::signal_group(child.id(), libc::SIGKILL),
                _ => {
                    process::kill_and_reap(&mut child);
                }
            }
        }
        let threads: Vec<_> = self.inner.threads.lock().unwrap().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
    }
}

fn map_call_result(result: CallToolResult) -> ToolResult {
    let mut texts = Vec::new();
    let mut image = None;
    let mut skipped = Vec::new();
    for item in result.content {
        match item.kind.as_str() {
            "text" => texts.push(item.text.unwrap_or_default()),
            "image" if image.is_none() => image = item.data,
            other => skipped.push(other.to_owned()),
        }
    }
    let text = texts.join("\n");
    let mut out = ToolResult::default();
    if result.is_error {
        out.error = Some(if text.is_empty() { "tool reported an error".into() } else { text });
    } else if !text.is_empty() || image.is_none() {
        out.output = Some(text);
    }
    out.base64_image = image;
    if !skipped.is_empty() {
        out.system = Some(format!("ignored content: {}", skipped.join(",")));
    }
    out
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().unwrap().take() {
            process::kill_and_reap(&mut child);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(json: &str) -> ToolResult {
        map_call_result(serde_json::from_str(json).unwrap())
    }

    #[test]
    fn maps_text_image_and_errors() {
        assert_eq!(
            result(r#"{"content":[{"type":"text","text":"created note 1"}]}"#),
            ToolResult::output("created note 1")
        );
        assert_eq!(
            result(r#"{"content":[{"type":"text","text":"boom"}],"isError":true}"#),
            ToolResult::error("boom")
        );
        let img = result(r#"{"content":[{"type":"image","data":"aGk=","mimeType":"image/png"}]}"#);
        assert_eq!(img.base64_image.as_deref(), Some("aGk="));
        assert_eq!(img.output, None);
        assert_eq!(result(r#"{"content":[]}"#), ToolResult::output(""));
        let mixed = result(r#"{"content":[{"type":"text","text":"a"},{"type":"resource"},{"type":"text","text":"b"}]}"#);
        assert_eq!(mixed.output.as_deref(), Some("a\nb"));
        assert_eq!(mixed.system.as_deref(), Some("ignored content: resource"));
    }

    #[test]
    fn excerpt_respects_char_boundaries() {
        let s = "é".repeat(100);
        assert!(excerpt(&s).len() <= EXCERPT_LEN);
    }
}
