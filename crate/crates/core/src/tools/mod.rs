//! Unified tool space: GUI (simulated screen), shell, file editing and MCP
//! tools behind one registry, filtered by interaction modality.

mod control;
mod edit;
mod registry;
mod render;
mod screen;
mod shell;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use control::{ControlClient, ControlReply, ControlRequest};
pub use edit::{edit_action, Editor};
pub use registry::{build_registry, RegisteredTool, ToolError, ToolRegistry};
pub use screen::{
    computer_action, ActionBinding, BindingHandler, ComputerAction, GuiManifest, ScrollDirection,
    SimulatedScreen, WidgetSpec,
};
pub use shell::{shell_action, truncate_output, OUTPUT_LIMIT};

pub const COMPUTER_TOOL: &str = "computer";
pub const SHELL_TOOL: &str = "bash";
pub const EDIT_TOOL: &str = "str_replace_editor";
/// Separator between server id and tool name in registry names.
pub const MCP_NAME_SEPARATOR: &str = "__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    GuiOnly,
    McpOnly,
    Hybrid,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 3] = [ModalityKind::GuiOnly, ModalityKind::McpOnly, ModalityKind::Hybrid];

    pub fn has_gui(self) -> bool {
        matches!(self, ModalityKind::GuiOnly | ModalityKind::Hybrid)
    }

    pub fn has_mcp(self) -> bool {
        matches!(self, ModalityKind::McpOnly | ModalityKind::Hybrid)
    }

    /// Short name used on the command line and in output paths.
    pub fn short_name(self) -> &'static str {
        match self {
            ModalityKind::GuiOnly => "gui",
            ModalityKind::McpOnly => "mcp",
            ModalityKind::Hybrid => "hybrid",
        }
    }
}

impl FromStr for ModalityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gui" | "gui_only" => Ok(ModalityKind::GuiOnly),
            "mcp" | "mcp_only" => Ok(ModalityKind::McpOnly),
            "hybrid" => Ok(ModalityKind::Hybrid),
            other => Err(format!("unknown modality `{other}` (expected gui, mcp or hybrid)")),
        }
    }
}

/// Which tool families an agent may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Modality {
    pub kind: ModalityKind,
    pub bash_enabled: bool,
}

impl Modality {
    pub fn new(kind: ModalityKind, bash_enabled: bool) -> Self {
        Self { kind, bash_enabled }
    }

    /// All six configurations: three kinds, shell/edit on and off.
    pub fn all() -> impl Iterator<Item = Modality> {
        ModalityKind::ALL
            .into_iter()
            .flat_map(|k| [Modality::new(k, true), Modality::new(k, false)])
    }

    /// `hybrid`, `gui-nobash`, ...
    pub fn label(&self) -> String {
        if self.bash_enabled {
            self.kind.short_name().to_owned()
        } else {
            format!("{}-nobash", self.kind.short_name())
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: serde_json::Value,
    pub call_id: String,
}

/// Per-call limits imposed by the attempt.
#[derive(Debug, Clone, Copy, Default)]
pub struct CallContext {
    pub deadline: Option<Instant>,
}

impl CallContext {
    pub fn until(deadline: Instant) -> Self {
        Self {
            deadline: Some(deadline),
        }
    }

    /// `want`, shortened so it never runs past the deadline.
    pub fn clamp(&self, want: Duration) -> Duration {
        match self.deadline {
            Some(d) => want.min(d.saturating_duration_since(Instant::now())),
            None => want,
        }
    }
}
