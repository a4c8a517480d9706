use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::edit::{edit_action, Editor};
use super::screen::{computer_action, ComputerAction, SimulatedScreen};
use super::shell::shell_action;
use super::{CallContext, Modality, ToolCall, COMPUTER_TOOL, EDIT_TOOL, MCP_NAME_SEPARATOR, SHELL_TOOL};
use crate::mcp::{InputSchema, McpError, McpSession, ToolDescriptor, ToolOrigin, ToolResult};

/// Default per-command limit for the shell tool.
pub const DEFAULT_SHELL_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tool discovery failed for server `{server}`: {source}")]
    Discovery {
        server: String,
        #[source]
        source: McpError,
    },
}

/// A tool as advertised to the agent: the registry name plus the
/// unmodified descriptor it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisteredTool {
    pub name: String,
    pub descriptor: ToolDescriptor,
}

impl RegisteredTool {
    pub fn description(&self) -> &str {
        &self.descriptor.description
    }

    pub fn input_schema(&self) -> &InputSchema {
        &self.descriptor.input_schema
    }
}

#[derive(Debug, Clone)]
enum Binding {
    Computer,
    Shell,
    Edit,
    Mcp { session: usize, tool: String },
}

/// The tool set for one attempt and the backends behind it.
pub struct ToolRegistry {
    modality: Modality,
    tools: Vec<RegisteredTool>,
    bindings: HashMap<String, Binding>,
    screen: Option<SimulatedScreen>,
    editor: Editor,
    sessions: Vec<McpSession>,
    workspace: PathBuf,
    shell_timeout: Duration,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("modality", &self.modality)
            .field("tools", &self.names())
            .finish_non_exhaustive()
    }
}

fn local(name: &str, description: &str, schema: serde_json::Value) -> ToolDescriptor {
    ToolDescriptor {
        name: name.to_owned(),
        description: description.to_owned(),
        input_schema: InputSchema::from_value(&schema),
        origin: ToolOrigin::Local,
    }
}

fn computer_descriptor() -> ToolDescriptor {
    local(
        COMPUTER_TOOL,
        "Observe and operate the screen with mouse and keyboard actions.",
        json!({
            "type": "object",
            "properties": {
                "action": {"type": "string", "enum": ComputerAction::NAMES},
                "coordinate": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "start_coordinate": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "text": {"type": "string"},
                "duration": {"type": "number"},
                "scroll_direction": {"type": "string", "enum": ["up", "down"]},
                "scroll_amount": {"type": "integer", "minimum": 0}
            },
            "required": ["action"]
        }),
    )
}

fn shell_descriptor() -> ToolDescriptor {
    local(
        SHELL_TOOL,
        "Run a shell command in the task workspace.",
        json!({
            "type": "object",
            "properties": {"command": {"type": "string"}},
            "required": ["command"]
        }),
    )
}

fn edit_descriptor() -> ToolDescriptor {
    local(
        EDIT_TOOL,
        "View, create and edit files in the task workspace.",
        json!({
            "type": "object",
            "properties": {
                "command": {"type": "string", "enum": ["view", "create", "str_replace", "insert", "undo_edit"]},
                "path": {"type": "string"},
                "file_text": {"type": "string"},
                "old_str": {"type": "string"},
                "new_str": {"type": "string"},
                "insert_line": {"type": "integer", "minimum": 0},
                "view_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
            },
            "required": ["command"]
        }),
    )
}

/// Assembles the tool set for `modality`:
///
/// | kind     | computer | bash + editor     | MCP tools |
/// |----------|----------|-------------------|-----------|
/// | gui_only | yes      | if `bash_enabled` | no        |
/// | mcp_only | no       | if `bash_enabled` | yes       |
/// | hybrid   | yes      | if `bash_enabled` | yes       |
///
/// MCP tools are registered as `<server_id>__<tool>`.
pub fn build_registry(
    modality: Modality,
    sessions: &[McpSession],
    screen: Option<SimulatedScreen>,
    workspace: &Path,
) -> Result<ToolRegistry, ToolError> {
    let mut reg = ToolRegistry {
        modality,
        tools: Vec::new(),
        bindings: HashMap::new(),
        screen: None,
        editor: Editor::new(workspace),
        sessions: Vec::new(),
        workspace: workspace.to_owned(),
        shell_timeout: DEFAULT_SHELL_TIMEOUT,
    };
    if modality.kind.has_gui() {
        let screen = screen.ok_or_else(|| ToolError::Config(format!("{modality} modality needs a screen")))?;
        reg.screen = Some(screen);
        reg.add(COMPUTER_TOOL.to_owned(), computer_descriptor(), Binding::Computer)?;
    }
    if modality.bash_enabled {
        reg.add(SHELL_TOOL.to_owned(), shell_descriptor(), Binding::Shell)?;
        reg.add(EDIT_TOOL.to_owned(), edit_descriptor(), Binding::Edit)?;
    }
    if modality.kind.has_mcp() {
        for (idx, session) in sessions.iter().enumerate() {
            let tools = session.list_tools().map_err(|source| ToolError::Discovery {
                server: session.server_id().to_owned(),
                source,
            })?;
            for d in tools {
                let name = format!("{}{MCP_NAME_SEPARATOR}{}", session.server_id(), d.name);
                let binding = Binding::Mcp {
                    session: idx,
                    tool: d.name.clone(),
                };
                reg.add(name, d, binding)?;
            }
            reg.sessions.push(session.clone());
        }
    }
    Ok(reg)
}

impl ToolRegistry {
    fn add(&mut self, name: String, descriptor: ToolDescriptor, binding: Binding) -> Result<(), ToolError> {
        if self.bindings.insert(name.clone(), binding).is_some() {
            return Err(ToolError::Config(format!("duplicate tool name `{name}`")));
        }
        self.tools.push(RegisteredTool { name, descriptor });
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn tools(&self) -> &[RegisteredTool] {
        &self.tools
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn screen(&self) -> Option<&SimulatedScreen> {
        self.screen.as_ref()
    }

    pub fn screen_mut(&mut self) -> Option<&mut SimulatedScreen> {
        self.screen.as_mut()
    }

    pub fn set_shell_timeout(&mut self, timeout: Duration) {
        self.shell_timeout = timeout;
    }

    /// Routes a call to its backend. Every failure, including an unknown
    /// name, comes back as `ToolResult.error` for the agent to see.
    pub fn dispatch(&mut self, call: &ToolCall, ctx: &CallContext) -> ToolResult {
        let Some(binding) = self.bindings.get(&call.name).cloned() else {
            return ToolResult::error(format!("unknown tool: {}", call.name));
        };
        // held modifiers last for exactly one tool call, whatever it is
        let held = self.screen.as_mut().map(|s| std::mem::take(&mut s.held));
        match binding {
            Binding::Computer => {
                let screen = self.screen.as_mut().expect("computer tool implies a screen");
                screen.held = held.unwrap_or_default();
                match serde_json::from_value::<ComputerAction>(call.args.clone()) {
                    Ok(action) => computer_action(screen, action, ctx),
                    Err(e) => {
                        screen.held.clear();
                        ToolResult::error(format!("invalid computer action: {e}"))
                    }
                }
            }
            Binding::Shell => match call.args.get("command").and_then(|c| c.as_str()) {
                Some(cmd) => shell_action(&self.workspace, cmd, ctx.clamp(self.shell_timeout)),
                None => ToolResult::error("missing `command` string"),
            },
            Binding::Edit => edit_action(&mut self.editor, &call.args),
            Binding::Mcp { session, tool } => {
                let args = if call.args.is_null() { json!({}) } else { call.args.clone() };
                let limit = ctx.deadline.map(|_| ctx.clamp(Duration::MAX));
                match self.sessions[session].call_tool_within(&tool, args, limit) {
                    Ok(result) => result,
                    Err(e) => ToolResult::error(e.to_string()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{GuiManifest, ModalityKind};

    fn screen() -> SimulatedScreen {
        SimulatedScreen::new(&GuiManifest { width: 32, height: 32, widgets: vec![] }).unwrap()
    }

    fn call(name: &str, args: serde_json::Value) -> ToolCall {
        ToolCall { name: name.into(), args, call_id: "c1".into() }
    }

    #[test]
    fn local_sets_per_modality() {
        let dir = tempfile::tempdir().unwrap();
        let expect: [(Modality, &[&str]); 6] = [
            (Modality::new(ModalityKind::GuiOnly, true), &["computer", "bash", "str_replace_editor"]),
            (Modality::new(ModalityKind::GuiOnly, false), &["computer"]),
            (Modality::new(ModalityKind::McpOnly, true), &["bash", "str_replace_editor"]),
            (Modality::new(ModalityKind::McpOnly, false), &[]),
            (Modality::new(ModalityKind::Hybrid, true), &["computer", "bash", "str_replace_editor"]),
            (Modality::new(ModalityKind::Hybrid, false), &["computer"]),
        ];
        for (m, names) in expect {
            let reg = build_registry(m, &[], Some(screen()), dir.path()).unwrap();
            assert_eq!(reg.names(), names, "{m}");
        }
    }

    #[test]
    fn gui_without_screen_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModalityKind::GuiOnly, ModalityKind::Hybrid] {
            assert!(matches!(
                build_registry(Modality::new(kind, true), &[], None, dir.path()),
                Err(ToolError::Config(_))
            ));
        }
        assert!(build_registry(Modality::new(ModalityKind::McpOnly, true), &[], None, dir.path()).is_ok());
    }

    #[test]
    fn unknown_tool_is_agent_visible_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = build_registry(Modality::new(ModalityKind::GuiOnly, false), &[], Some(screen()), dir.path()).unwrap();
        let r = reg.dispatch(&call("nope", json!({})), &CallContext::default());
        assert_eq!(r.error.as_deref(), Some("unknown tool: nope"));
        let r = reg.dispatch(&call("bash", json!({"command": "true"})), &CallContext::default());
        assert_eq!(r.error.as_deref(), Some("unknown tool: bash"));
    }

    #[test]
    fn dispatches_locals() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = build_registry(Modality::new(ModalityKind::Hybrid, true), &[], Some(screen()), dir.path()).unwrap();
        let ctx = CallContext::default();
        assert!(reg.dispatch(&call("computer", json!({"action": "screenshot"})), &ctx).base64_image.is_some());
        assert_eq!(reg.dispatch(&call("bash", json!({"command": "echo hi"})), &ctx).output.as_deref(), Some("hi\n"));
        reg.dispatch(&call("str_replace_editor", json!({"command": "create", "path": "a", "file_text": "z"})), &ctx);
        assert_eq!(std::fs::read_to_string(dir.path().join("a")).unwrap(), "z");
        assert!(reg.dispatch(&call("computer", json!({"action": "fly"})), &ctx).is_error());
    }

    #[test]
    fn hold_key_expires_on_any_call() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = build_registry(Modality::new(ModalityKind::Hybrid, true), &[], Some(screen()), dir.path()).unwrap();
        let ctx = CallContext::default();
        reg.dispatch(&call("computer", json!({"action": "hold_key", "text": "ctrl"})), &ctx);
        reg.dispatch(&call("bash", json!({"command": "true"})), &ctx);
        let r = reg.dispatch(&call("computer", json!({"action": "key", "text": "c"})), &ctx);
        assert_eq!(r.output.as_deref(), Some("pressed c"));
    }
}
