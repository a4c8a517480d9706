use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Wire protocol version carried in every event's `v` field.
pub const PROBE_PROTOCOL_VERSION: u64 = 1;

/// One probe message. On the wire it is a single JSON object with exactly
/// these fields, in this order, followed by `\n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeEvent {
    pub v: u64,
    pub source: String,
    pub event: String,
    pub seq: u64,
    pub ts_ns: u64,
    pub payload: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed event: {0}")]
pub struct MalformedEvent(pub String);

impl ProbeEvent {
    pub fn new(source: impl Into<String>, event: impl Into<String>, seq: u64, ts_ns: u64, payload: Map<String, Value>) -> Self {
        Self {
            v: PROBE_PROTOCOL_VERSION,
            source: source.into(),
            event: event.into(),
            seq,
            ts_ns,
            payload,
        }
    }

    /// Parses one line; a trailing `\n` (or `\r\n`) is allowed.
    pub fn parse(line: &[u8]) -> Result<Self, MalformedEvent> {
        let line = line.strip_suffix(b"\n").unwrap_or(line);
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let text = std::str::from_utf8(line).map_err(|_| MalformedEvent("not UTF-8".into()))?;
        let ev: ProbeEvent = serde_json::from_str(text).map_err(|e| MalformedEvent(e.to_string()))?;
        if ev.v != PROBE_PROTOCOL_VERSION {
            return Err(MalformedEvent(format!("unsupported version {}", ev.v)));
        }
        Ok(ev)
    }

    /// The wire form, newline-terminated.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("probe events always serialize");
        s.push('\n');
        s
    }
}
