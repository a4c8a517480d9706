//! Attempt orchestration: agents, the per-attempt workflow and suites.

mod agent;
mod attempt;
mod record;
mod suite;

pub use agent::{
    find_plan, make_scripted_agent, plan_agent, Agent, AgentAction, AgentTurn, PlanError, PlanStep, ScriptedAgent,
    ScriptedPlan, StopAgent,
};
pub use attempt::{
    attempt_dir, run_attempt, workspace_dir, AttemptOptions, SetupError, CONTROL_ENDPOINT_FIELD, DEFAULT_READY_TIMEOUT,
    DEFAULT_SETTLE, DEFAULT_TEARDOWN_GRACE,
};
pub use record::{AttemptRecord, EndReason, RunConfig, RunReport, ToolCallLog};
pub use suite::{run_suite, write_report, AgentFactory, RunError, RunOptions};
