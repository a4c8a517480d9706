use serde::{Deserialize, Serialize};

use super::predicate::step_matches;
use super::ProbeEvent;
use crate::task::{KeyStepSpec, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Completed,
}

/// Identifies the event that completed a step: its origin plus its
/// position in the evaluated stream (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRef {
    pub source: String,
    pub seq: u64,
    pub event: String,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub spec: KeyStepSpec,
    pub status: StepStatus,
    pub completed_by: Option<EventRef>,
}

impl StepState {
    fn pending(spec: &KeyStepSpec) -> Self {
        Self {
            spec: spec.clone(),
            status: StepStatus::Pending,
            completed_by: None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == StepStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTransition {
    pub step_id: String,
    pub is_goal: bool,
    pub by: EventRef,
}

/// Read-only view of a machine's progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineStatus {
    pub completed: Vec<String>,
    pub key_steps_completed: u32,
    pub key_steps_total: u32,
    pub goal_completed: bool,
}

/// Key steps plus the final goal, each pending until a matching event
/// arrives. Statuses only ever move from pending to completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneMachine {
    steps: Vec<StepState>,
    goal: StepState,
    processed: u64,
}

pub fn register_handlers(cfg: &TaskConfig) -> MilestoneMachine {
    MilestoneMachine {
        steps: cfg.key_steps.iter().map(StepState::pending).collect(),
        goal: StepState::pending(&cfg.final_goal),
        processed: 0,
    }
}

impl MilestoneMachine {
    pub fn steps(&self) -> &[StepState] {
        &self.steps
    }

    pub fn goal(&self) -> &StepState {
        &self.goal
    }

    pub fn step(&self, step_id: &str) -> Option<&StepState> {
        self.steps.iter().chain(std::iter::once(&self.goal)).find(|s| s.spec.step_id == step_id)
    }

    /// `(step_id, predecessor)` for every ordered step.
    pub fn order_constraints(&self) -> Vec<(&str, &str)> {
        self.steps
            .iter()
            .chain(std::iter::once(&self.goal))
            .filter_map(|s| Some((s.spec.step_id.as_str(), s.spec.ordered_after.as_deref()?)))
            .collect()
    }

    pub fn goal_completed(&self) -> bool {
        self.goal.is_completed()
    }

    pub fn key_steps_completed(&self) -> u32 {
        self.steps.iter().filter(|s| s.is_completed()).count() as u32
    }

    pub fn key_steps_total(&self) -> u32 {
        self.steps.len() as u32
    }

    /// Number of events fed through [`advance`](Self::advance).
    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn status(&self) -> MachineStatus {
        MachineStatus {
            completed: self
                .steps
                .iter()
                .chain(std::iter::once(&self.goal))
                .filter(|s| s.is_completed())
                .map(|s| s.spec.step_id.clone())
                .collect(),
            key_steps_completed: self.key_steps_completed(),
            key_steps_total: self.key_steps_total(),
            goal_completed: self.goal_completed(),
        }
    }

    /// Applies one event. A step fires when it is pending, the event matches
    /// its handler, and its predecessor (if any) was already completed
    /// before this event. One event may complete several unordered steps.
    pub fn advance(&mut self, e: &ProbeEvent) -> Vec<StepTransition> {
        let position = self.processed;
        self.processed += 1;
        let done_before: Vec<String> = self.status().completed;
        let ready = |s: &StepState| {
            !s.is_completed()
                && s.spec.ordered_after.as_ref().is_none_or(|p| done_before.contains(p))
                && step_matches(&s.spec, e)
        };
        let by = EventRef {
            source: e.source.clone(),
            seq: e.seq,
            event: e.event.clone(),
            position,
        };
        let mut out = Vec::new();
        for (is_goal, s) in self.steps.iter_mut().map(|s| (false, s)).chain(std::iter::once((true, &mut self.goal))) {
            if ready(s) {
                s.status = StepStatus::Completed;
                s.completed_by = Some(by.clone());
                out.push(StepTransition {
                    step_id: s.spec.step_id.clone(),
                    is_goal,
                    by: by.clone(),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cfg(steps: serde_json::Value) -> TaskConfig {
        serde_json::from_value(json!({
            "task_id": "t", "instruction": "i",
            "app": {"name": "a", "argv": ["/bin/true"]},
            "key_steps": steps,
            "final_goal": {"step_id": "goal", "signal": "saved"}
        }))
        .unwrap()
    }

    fn ev(event: &str, seq: u64, payload: serde_json::Value) -> ProbeEvent {
        ProbeEvent::new("p1", event, seq, 0, payload.as_object().unwrap().clone())
    }

    #[test]
    fn registers_pending_entries() {
        let m = register_handlers(&cfg(json!([
            {"step_id": "s1", "signal": "a"},
            {"step_id": "s2", "signal": "b", "ordered_after": "s1"}
        ])));
        assert_eq!(m.steps().len() + 1, 3);
        assert!(m.steps().iter().all(|s| s.status == StepStatus::Pending));
        assert_eq!(m.order_constraints(), vec![("s2", "s1")]);
        let empty = register_handlers(&cfg(json!([])));
        assert_eq!(empty.key_steps_total(), 0);
        assert!(!empty.goal_completed());
    }

    #[test]
    fn monotone_completion() {
        let mut m = register_handlers(&cfg(json!([
            {"step_id": "s1", "signal": "note_added", "match": [{"path": "title", "op": "equals", "value": "a"}]}
        ])));
        let e = ev("note_added", 1, json!({"title": "a"}));
        let t = m.advance(&e);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].step_id, "s1");
        assert!(m.advance(&e).is_empty());
        assert_eq!(m.step("s1").unwrap().completed_by.as_ref().unwrap().position, 0);
    }

    #[test]
    fn strict_ordering_both_orders() {
        let steps = json!([
            {"step_id": "s1", "signal": "a"},
            {"step_id": "s2", "signal": "b", "ordered_after": "s1"}
        ]);
        // b before a: s2 stays pending even after s1 completes
        let mut m = register_handlers(&cfg(steps.clone()));
        assert!(m.advance(&ev("b", 1, json!({}))).is_empty());
        assert_eq!(m.advance(&ev("a", 2, json!({})))[0].step_id, "s1");
        assert_eq!(m.step("s2").unwrap().status, StepStatus::Pending);
        // a then b: both complete
        let mut m = register_handlers(&cfg(steps));
        m.advance(&ev("a", 1, json!({})));
        assert_eq!(m.advance(&ev("b", 2, json!({})))[0].step_id, "s2");
        assert_eq!(m.key_steps_completed(), 2);
    }

    #[test]
    fn one_event_cannot_chain_through_an_order() {
        let mut m = register_handlers(&cfg(json!([
            {"step_id": "s1", "signal": "a"},
            {"step_id": "s2", "signal": "a", "ordered_after": "s1"}
        ])));
        assert_eq!(m.advance(&ev("a", 1, json!({}))).len(), 1);
        assert_eq!(m.advance(&ev("a", 2, json!({})))[0].step_id, "s2");
    }

    #[test]
    fn goal_is_tracked_separately() {
        let mut m = register_handlers(&cfg(json!([{"step_id": "s1", "signal": "a"}])));
        let t = m.advance(&ev("saved", 1, json!({})));
        assert!(t[0].is_goal);
        assert!(m.goal_completed());
        assert_eq!(m.key_steps_completed(), 0);
    }
}
