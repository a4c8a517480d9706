use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::ToolCallLog;
use crate::tools::{Modality, RegisteredTool, ToolCall};

/// What an agent sees on each turn.
#[derive(Debug, Clone)]
pub struct AgentTurn {
    pub instruction: String,
    pub tools: Arc<Vec<RegisteredTool>>,
    /// Every call made so far with its result, oldest first.
    pub history: Vec<ToolCallLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    Call(ToolCall),
    Stop { note: Option<String> },
}

/// Anything that picks the next tool call. Each turn must return; the
/// harness abandons a turn that outlives the attempt deadline.
pub trait Agent: Send {
    fn next_action(&mut self, turn: &AgentTurn) -> AgentAction;
}

/// Stops on the first turn.
#[derive(Debug, Clone, Default)]
pub struct StopAgent {
    pub note: Option<String>,
}

impl Agent for StopAgent {
    fn next_action(&mut self, _turn: &AgentTurn) -> AgentAction {
        AgentAction::Stop { note: self.note.clone() }
    }
}

/// One plan entry: a tool call, or an explicit stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub args: Value,
    /// Substring the previous step's result text must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stop: bool,
}

impl PlanStep {
    pub fn call(tool: impl Into<String>, args: Value) -> Self {
        Self {
            tool: Some(tool.into()),
            args,
            expect: None,
            stop: false,
        }
    }

    pub fn stop() -> Self {
        Self {
            tool: None,
            args: Value::Null,
            expect: None,
            stop: true,
        }
    }

    pub fn expecting(mut self, text: impl Into<String>) -> Self {
        self.expect = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPlan {
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan has no steps")]
    Empty,
    #[error("step {0} asserts on a previous result but has none")]
    AssertionWithoutHistory(usize),
    #[error("step {0} must name a tool or be a stop, not both or neither")]
    BadStep(usize),
    #[error("cannot read plan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid plan {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl ScriptedPlan {
    pub fn new(steps: Vec<PlanStep>) -> Result<Self, PlanError> {
        let plan = Self { steps };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.steps.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.stop == s.tool.is_some() {
                return Err(PlanError::BadStep(i));
            }
            if i == 0 && s.expect.is_some() {
                return Err(PlanError::AssertionWithoutHistory(0));
            }
        }
        Ok(())
    }

    /// Reads a plan file: either `{"steps": [...]}` or a bare step list.
    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse_err = |e: serde_json::Error| PlanError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        };
        let value: Value = serde_json::from_str(&text).map_err(parse_err)?;
        let plan = if value.is_array() {
            ScriptedPlan {
                steps: serde_json::from_value(value).map_err(parse_err)?,
            }
        } else {
            serde_json::from_value(value).map_err(parse_err)?
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Replays a plan verbatim. A failed `expect` stops the agent with a note;
/// running off the end of the plan stops it too.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    plan: ScriptedPlan,
    next: usize,
}

pub fn make_scripted_agent(plan: ScriptedPlan) -> ScriptedAgent {
    ScriptedAgent { plan, next: 0 }
}

impl Agent for ScriptedAgent {
    fn next_action(&mut self, turn: &AgentTurn) -> AgentAction {
        let Some(step) = self.plan.steps.get(self.next) else {
            return AgentAction::Stop { note: None };
        };
        let idx = self.next;
        self.next += 1;
        if let Some(want) = &step.expect {
            let prev = turn.history.last().map(|l| l.result.text()).unwrap_or_default();
            if !prev.contains(want.as_str()) {
                self.next = self.plan.steps.len();
                return AgentAction::Stop {
                    note: Some(format!("plan step {idx}: expected previous result to contain {want:?}")),
                };
            }
        }
        match &step.tool {
            Some(tool) if !step.stop => AgentAction::Call(ToolCall {
                name: tool.clone(),
                args: if step.args.is_null() { Value::Object(Default::default()) } else { step.args.clone() },
                call_id: format!("call-{idx}"),
            }),
            _ => {
                self.next = self.plan.steps.len();
                AgentAction::Stop { note: None }
            }
        }
    }
}

/// Finds the plan for a task: `<dir>/<task>.<kind>.json` (kind is `gui`,
/// `mcp` or `hybrid`) first, then `<dir>/<task>.json`.
pub fn find_plan(dir: &Path, task_id: &str, modality: Modality) -> Option<PathBuf> {
    [
        dir.join(format!("{task_id}.{}.json", modality.kind.short_name())),
        dir.join(format!("{task_id}.json")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

/// Agent for a task from a plan directory. With no plan file the agent
/// stops at once; a bad plan file stops it with the error as a note.
pub fn plan_agent(dir: &Path, task_id: &str, modality: Modality) -> Box<dyn Agent> {
    match find_plan(dir, task_id, modality) {
        None => Box::new(StopAgent {
            note: Some(format!("no plan for `{task_id}` in {}", dir.display())),
        }),
        Some(path) => match ScriptedPlan::load(&path) {
            Ok(plan) => Box::new(make_scripted_agent(plan)),
            Err(e) => Box::new(StopAgent { note: Some(e.to_string()) }),
        },
    }
}
