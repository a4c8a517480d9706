//! MCP client: stdio transport, tool discovery and invocation.
//!
//! Messages are JSON-RPC 2.0, one UTF-8 JSON object per line on the
//! server's stdin/stdout. Only `initialize`, `tools/list` and `tools/call`
//! are issued; server notifications are logged and otherwise ignored.

mod session;
mod types;

pub use session::{connect, McpError, McpSession, SessionState, PROTOCOL_VERSION};
pub use types::{
    InputSchema, McpServerConfig, ToolDescriptor, ToolOrigin, ToolResult, DEFAULT_CALL_TIMEOUT_MS,
    DEFAULT_CONNECT_TIMEOUT_MS,
};
