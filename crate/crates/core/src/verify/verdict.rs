use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MilestoneMachine;

/// Why an attempt failed. Only `TimeLimitExceeded` is assigned by the
/// engine; the rest come from post-hoc annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    ImpreciseCursorPositioning,
    UiElementNotFound,
    LimitedReasoningCapability,
    McpApiIncompatibility,
    InsufficientMcpCoverage,
    InsufficientMcpToolDescription,
    TimeLimitExceeded,
    Others,
}

impl FailureReason {
    pub const ALL: [FailureReason; 8] = [
        FailureReason::ImpreciseCursorPositioning,
        FailureReason::UiElementNotFound,
        FailureReason::LimitedReasoningCapability,
        FailureReason::McpApiIncompatibility,
        FailureReason::InsufficientMcpCoverage,
        FailureReason::InsufficientMcpToolDescription,
        FailureReason::TimeLimitExceeded,
        FailureReason::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureReason::ImpreciseCursorPositioning => "ImpreciseCursorPositioning",
            FailureReason::UiElementNotFound => "UiElementNotFound",
            FailureReason::LimitedReasoningCapability => "LimitedReasoningCapability",
            FailureReason::McpApiIncompatibility => "McpApiIncompatibility",
            FailureReason::InsufficientMcpCoverage => "InsufficientMcpCoverage",
            FailureReason::InsufficientMcpToolDescription => "InsufficientMcpToolDescription",
            FailureReason::TimeLimitExceeded => "TimeLimitExceeded",
            FailureReason::Others => "Others",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FailureReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown failure reason `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVerdict {
    pub success: bool,
    pub key_steps_completed: u32,
    pub key_steps_total: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
    pub wall_time_ms: u64,
    pub event_count: u64,
}

/// Final judgement. `deadline_exceeded` means the limit passed before the
/// goal completed, so a late goal never counts.
pub fn verdict(m: &MilestoneMachine, deadline_exceeded: bool, elapsed_ms: u64, events: u64) -> TaskVerdict {
    let success = m.goal_completed() && !deadline_exceeded;
    TaskVerdict {
        success,
        key_steps_completed: m.key_steps_completed(),
        key_steps_total: m.key_steps_total(),
        failure_reason: (deadline_exceeded && !success).then_some(FailureReason::TimeLimitExceeded),
        wall_time_ms: elapsed_ms,
        event_count: events,
    }
}
