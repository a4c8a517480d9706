use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsSummary;
use crate::mcp::ToolResult;
use crate::tools::{Modality, ModalityKind, ToolCall};
use crate::verify::{FailureReason, SinkStats, TaskVerdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallLog {
    pub call: ToolCall,
    pub result: ToolResult,
    pub duration_ms: u64,
}

/// Why the agent loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    GoalCompleted,
    AgentStopped,
    Deadline,
    AppExited,
    SetupFailed,
}

/// Everything recorded about one attempt of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub task_id: String,
    pub modality: Modality,
    pub attempt_index: u32,
    #[serde(default)]
    pub difficulty_steps: u32,
    pub verdict: TaskVerdict,
    #[serde(default)]
    pub tool_calls: Vec<ToolCallLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_journal_path: Option<PathBuf>,
    /// Unix epoch milliseconds.
    pub started_at: u64,
    pub ended_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_failure_reason: Option<FailureReason>,
    pub end_reason: EndReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_error: Option<String>,
    /// sha256 of the restored workspace before the agent started.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup_digest: Option<String>,
    #[serde(default)]
    pub sink_stats: SinkStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub(crate) fn epoch_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl AttemptRecord {
    /// A record carrying only a verdict; for metrics over synthesized or
    /// imported results.
    pub fn from_verdict(task_id: impl Into<String>, modality: Modality, attempt_index: u32, verdict: TaskVerdict) -> Self {
        Self {
            task_id: task_id.into(),
            modality,
            attempt_index,
            difficulty_steps: 0,
            verdict,
            tool_calls: Vec::new(),
            event_journal_path: None,
            started_at: 0,
            ended_at: 0,
            annotated_failure_reason: None,
            end_reason: EndReason::AgentStopped,
            setup_error: None,
            setup_digest: None,
            sink_stats: SinkStats::default(),
            notes: Vec::new(),
        }
    }

    pub fn success(&self) -> bool {
        self.verdict.success
    }

    /// The reason used in failure tables: the annotation if present, else
    /// the engine's, else `Others`. `None` for successes.
    pub fn failure_reason(&self) -> Option<FailureReason> {
        if self.verdict.success {
            return None;
        }
        Some(
            self.annotated_failure_reason
                .or(self.verdict.failure_reason)
                .unwrap_or(FailureReason::Others),
        )
    }
}

/// Settings a run was made with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub modality: ModalityKind,
    pub bash_enabled: bool,
    pub attempts_per_task: u32,
}

impl RunConfig {
    pub fn modality(&self) -> Modality {
        Modality::new(self.modality, self.bash_enabled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(rename = "suite")]
    pub suite_name: String,
    /// One entry per run merged into this report.
    pub config: Vec<RunConfig>,
    #[serde(default)]
    pub metrics: Option<MetricsSummary>,
    pub attempts: Vec<AttemptRecord>,
}

impl RunReport {
    pub fn new(suite_name: impl Into<String>, config: RunConfig, attempts: Vec<AttemptRecord>) -> Self {
        let mut r = Self {
            suite_name: suite_name.into(),
            config: vec![config],
            metrics: None,
            attempts,
        };
        r.refresh_metrics();
        r
    }

    /// Recomputes `metrics` from `attempts` (cleared when there are none).
    pub fn refresh_metrics(&mut self) {
        self.metrics = crate::metrics::summarize(&self.attempts).ok();
    }

    /// Combines runs, e.g. one per modality, into a single report.
    pub fn merge(reports: Vec<RunReport>) -> Option<RunReport> {
        let mut it = reports.into_iter();
        let mut out = it.next()?;
        for r in it {
            out.config.extend(r.config);
            out.attempts.extend(r.attempts);
        }
        out.refresh_metrics();
        Some(out)
    }
}
