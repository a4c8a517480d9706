use std::collections::BTreeMap;
use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

pub const DEFAULT_CONNECT_TIMEOUT_MS: u64 = 5_000;
pub const DEFAULT_CALL_TIMEOUT_MS: u64 = 60_000;

fn default_connect_timeout_ms() -> u64 {
    DEFAULT_CONNECT_TIMEOUT_MS
}

fn default_call_timeout_ms() -> u64 {
    DEFAULT_CALL_TIMEOUT_MS
}

/// How to launch one MCP server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McpServerConfig {
    pub server_id: String,
    pub argv: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default = "default_connect_timeout_ms")]
    pub connect_timeout_ms: u64,
    #[serde(default = "default_call_timeout_ms")]
    pub call_timeout_ms: u64,
}

impl McpServerConfig {
    pub fn new(server_id: impl Into<String>, argv: Vec<String>) -> Self {
        Self {
            server_id: server_id.into(),
            argv,
            env: BTreeMap::new(),
            connect_timeout_ms: DEFAULT_CONNECT_TIMEOUT_MS,
            call_timeout_ms: DEFAULT_CALL_TIMEOUT_MS,
        }
    }
}

/// A tool input schema kept as the exact bytes the server sent.
#[derive(Clone)]
pub struct InputSchema(Box<RawValue>);

impl InputSchema {
    pub fn from_raw(raw: Box<RawValue>) -> Self {
        Self(raw)
    }

    pub fn from_value(value: &serde_json::Value) -> Self {
        Self(RawValue::from_string(value.to_string()).expect("serialized JSON is valid"))
    }

    pub fn as_str(&self) -> &str {
        self.0.get()
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::from_str(self.0.get()).expect("raw schema is valid JSON")
    }
}

impl fmt::Debug for InputSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.get())
    }
}

impl PartialEq for InputSchema {
    fn eq(&self, other: &Self) -> bool {
        self.0.get() == other.0.get()
    }
}

impl Eq for InputSchema {}

impl Serialize for InputSchema {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for InputSchema {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Box::<RawValue>::deserialize(d).map(Self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "server_id")]
pub enum ToolOrigin {
    Local,
    Mcp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_schema: InputSchema,
    pub origin: ToolOrigin,
}

/// Normalized outcome of any tool invocation, local or MCP.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Base64-encoded PNG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base64_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl ToolResult {
    pub fn output(text: impl Into<String>) -> Self {
        Self {
            output: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn error(text: impl Into<String>) -> Self {
        Self {
            error: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn image(base64_png: String) -> Self {
        Self {
            base64_image: Some(base64_png),
            ..Self::default()
        }
    }

    pub fn with_system(mut self, note: impl Into<String>) -> Self {
        self.system = Some(note.into());
        self
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// At least one field is set and any image decodes as Base64.
    pub fn is_well_formed(&self) -> bool {
        let any = self.output.is_some()
            || self.base64_image.is_some()
            || self.error.is_some()
            || self.system.is_some();
        let image_ok = self
            .base64_image
            .as_ref()
            .is_none_or(|b| base64::engine::general_purpose::STANDARD.decode(b).is_ok());
        any && image_ok
    }

    /// All text carried by the result, for substring checks.
    pub fn text(&self) -> String {
        [&self.output, &self.error, &self.system]
            .into_iter()
            .flatten()
            .cloned()
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_bytes_preserved() {
        let raw = r#"{"type":"object",  "properties":{"b":{},"a":{}}, "x":1.50}"#;
        let schema: InputSchema = serde_json::from_str(raw).unwrap();
        assert_eq!(schema.as_str(), raw);
        assert_eq!(serde_json::to_string(&schema).unwrap(), raw);
    }

    #[test]
    fn result_shape() {
        assert!(!ToolResult::default().is_well_formed());
        assert!(ToolResult::output("").is_well_formed());
        assert!(ToolResult::image("aGk=".into()).is_well_formed());
        assert!(!ToolResult::image("not base64!".into()).is_well_formed());
        let json = serde_json::to_string(&ToolResult::output("hi").with_system("exit=0")).unwrap();
        assert_eq!(json, r#"{"output":"hi","system":"exit=0"}"#);
    }

    #[test]
    fn config_defaults() {
        let cfg: McpServerConfig = serde_json::from_str(r#"{"server_id":"demo","argv":["x"]}"#).unwrap();
        assert_eq!(cfg.connect_timeout_ms, 5000);
        assert_eq!(cfg.call_timeout_ms, 60000);
    }
}
