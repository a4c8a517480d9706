//! Declarative task configuration: types, loading, validation and suites.

mod load;
mod suite;
mod validate;
mod vars;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use load::{load_task_config, parse_task_config, TaskError};
pub use suite::{load_suite_manifest, SuiteManifest, SuiteTask};
pub use validate::{validate_task_config, Violation, ViolationKind};
pub use vars::Vars;

use crate::env::AppSpec;
use crate::mcp::McpServerConfig;
use crate::tools::ModalityKind;

/// Agent-loop time limit applied when a task does not set one.
pub const DEFAULT_TIMEOUT_S: u64 = 300;

fn default_timeout_s() -> u64 {
    DEFAULT_TIMEOUT_S
}

/// One task: what the agent is asked to do and how completion is judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task_id: String,
    pub instruction: String,
    pub app: AppSpec,
    #[serde(default)]
    pub mcp_servers: Vec<McpServerConfig>,
    #[serde(default)]
    pub context_data: Vec<ContextDataEntry>,
    #[serde(default)]
    pub key_steps: Vec<KeyStepSpec>,
    pub final_goal: KeyStepSpec,
    #[serde(default)]
    pub state_queries: Vec<StateQuerySpec>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default)]
    pub difficulty_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_overrides: Option<BTreeSet<ModalityKind>>,
}

impl TaskConfig {
    /// Every step id in declaration order, final goal last.
    pub fn step_ids(&self) -> impl Iterator<Item = &str> {
        self.key_steps
            .iter()
            .chain(std::iter::once(&self.final_goal))
            .map(|s| s.step_id.as_str())
    }

    pub fn permits(&self, kind: ModalityKind) -> bool {
        self.modality_overrides
            .as_ref()
            .is_none_or(|allowed| allowed.contains(&kind))
    }
}

/// A file or directory restored into the workspace before launch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextDataEntry {
    /// Source path, relative to the suite root.
    pub from: PathBuf,
    /// Absolute target path inside the attempt workspace.
    pub to: PathBuf,
}

/// A handler: binds an in-app signal (plus payload predicates) to a milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyStepSpec {
    pub step_id: String,
    pub signal: String,
    #[serde(default, rename = "match")]
    pub predicates: Vec<PayloadPredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordered_after: Option<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    Equals,
    Contains,
    Exists,
    NumberInRange,
}

/// A test on one payload field, addressed by a dot-separated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadPredicate {
    pub path: String,
    pub op: PredicateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    FileJson,
    CommandJson,
}

/// A file path (for `file_json`) or an argv (for `command_json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryTarget {
    Path(String),
    Argv(Vec<String>),
}

/// Copies `source` (a path in the queried document) to `field` in the
/// synthesized event payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRule {
    pub field: String,
    pub source: String,
}

/// A poller that turns committed external state into probe events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateQuerySpec {
    pub query_id: String,
    pub kind: QueryKind,
    pub target: QueryTarget,
    pub interval_ms: u64,
    pub emit_as: String,
    #[serde(default)]
    pub extract: Vec<ExtractRule>,
}

/// Minimum poll interval accepted by validation.
pub const MIN_QUERY_INTERVAL_MS: u64 = 10;
