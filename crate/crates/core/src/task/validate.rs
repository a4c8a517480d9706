use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    KeyStepSpec, PayloadPredicate, PredicateOp, QueryKind, QueryTarget, StateQuerySpec,
    TaskConfig, MIN_QUERY_INTERVAL_MS,
};
use crate::paths;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    EmptyTaskId,
    InvalidTimeout,
    EmptyArgv,
    DuplicateStepId,
    UnknownStep,
    OrderCycle,
    InvalidPredicate,
    MissingContextSource,
    RelativeTarget,
    PathEscape,
    LinkEscape,
    OverlappingTargets,
    MissingBindSource,
    DuplicateServerId,
    InvalidQuery,
    DuplicateEmitAs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

/// Checks every config invariant; an empty list means the task is runnable.
pub fn validate_task_config(cfg: &TaskConfig, suite_root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    if cfg.task_id.trim().is_empty() {
        out.push(Violation::new(ViolationKind::EmptyTaskId, "task_id is empty"));
    }
    if cfg.timeout_s < 1 {
        out.push(Violation::new(ViolationKind::InvalidTimeout, "timeout_s must be >= 1"));
    }
    check_app(cfg, &mut out);
    check_steps(cfg, &mut out);
    check_context(cfg, suite_root, &mut out);
    check_servers(cfg, &mut out);
    check_queries(&cfg.state_queries, &mut out);
    out
}

fn check_app(cfg: &TaskConfig, out: &mut Vec<Violation>) {
    if cfg.app.argv.is_empty() || cfg.app.argv[0].is_empty() {
        out.push(Violation::new(
            ViolationKind::EmptyArgv,
            format!("app `{}` has an empty argv", cfg.app.name),
        ));
    }
    for mount in &cfg.app.bind_mounts {
        if !mount.source.exists() {
            out.push(Violation::new(
                ViolationKind::MissingBindSource,
                format!("bind source {} does not exist", mount.source.display()),
            ));
        }
    }
}

fn check_steps(cfg: &TaskConfig, out: &mut Vec<Violation>) {
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (idx, step) in cfg.key_steps.iter().enumerate() {
        if position.insert(step.step_id.as_str(), idx).is_some() {
            out.push(Violation::new(
                ViolationKind::DuplicateStepId,
                format!("step_id `{}` declared more than once", step.step_id),
            ));
        }
    }
    if position.contains_key(cfg.final_goal.step_id.as_str()) {
        out.push(Violation::new(
            ViolationKind::DuplicateStepId,
            format!("final_goal reuses key step id `{}`", cfg.final_goal.step_id),
        ));
    }

    for (idx, step) in cfg.key_steps.iter().enumerate() {
        if let Some(pred) = &step.ordered_after {
            match position.get(pred.as_str()) {
                None => out.push(Violation::new(
                    ViolationKind::UnknownStep,
                    format!("`{}` is ordered after unknown step `{pred}`", step.step_id),
                )),
                Some(&p) if p >= idx => out.push(Violation::new(
                    ViolationKind::OrderCycle,
                    format!(
                        "`{}` is ordered after `{pred}`, which is not an earlier step",
                        step.step_id
                    ),
                )),
                Some(_) => {}
            }
        }
    }
    if let Some(pred) = &cfg.final_goal.ordered_after {
        if !position.contains_key(pred.as_str()) {
            out.push(Violation::new(
                ViolationKind::UnknownStep,
                format!("final_goal is ordered after unknown step `{pred}`"),
            ));
        }
    }

    for step in cfg.key_steps.iter().chain(std::iter::once(&cfg.final_goal)) {
        check_step_fields(step, out);
    }
}

fn check_step_fields(step: &KeyStepSpec, out: &mut Vec<Violation>) {
    if step.step_id.is_empty() || step.signal.is_empty() {
        out.push(Violation::new(
            ViolationKind::InvalidPredicate,
            format!("step `{}` needs a non-empty step_id and signal", step.step_id),
        ));
    }
    for p in &step.predicates {
        if let Err(why) = check_predicate(p) {
            out.push(Violation::new(
                ViolationKind::InvalidPredicate,
                format!("step `{}`, path `{}`: {why}", step.step_id, p.path),
            ));
        }
    }
}

fn check_predicate(p: &PayloadPredicate) -> Result<(), &'static str> {
    if p.path.is_empty() || p.path.split('.').any(str::is_empty) {
        return Err("malformed payload path");
    }
    match (p.op, &p.value) {
        (PredicateOp::Exists, None) => Ok(()),
        (PredicateOp::Exists, Some(_)) => Err("exists takes no value"),
        (PredicateOp::Equals | PredicateOp::Contains, Some(v)) if is_scalar(v) => Ok(()),
        (PredicateOp::Equals | PredicateOp::Contains, _) => Err("expected a scalar value"),
        (PredicateOp::NumberInRange, Some(Value::Array(bounds))) => match bounds.as_slice() {
            [lo, hi] => match (lo.as_f64(), hi.as_f64()) {
                (Some(lo), Some(hi)) if lo <= hi => Ok(()),
                (Some(_), Some(_)) => Err("range requires lo <= hi"),
                _ => Err("range bounds must be numbers"),
            },
            _ => Err("range must be [lo, hi]"),
        },
        (PredicateOp::NumberInRange, _) => Err("range must be [lo, hi]"),
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_) | Value::Null)
}

fn check_context(cfg: &TaskConfig, suite_root: &Path, out: &mut Vec<Violation>) {
    let mut targets: Vec<PathBuf> = Vec::new();
    for entry in &cfg.context_data {
        match paths::normalize_relative(&entry.from) {
            None => out.push(Violation::new(
                ViolationKind::PathEscape,
                format!("context source {} escapes the suite root", entry.from.display()),
            )),
            Some(rel) => {
                let src = suite_root.join(rel);
                if std::fs::symlink_metadata(&src).is_err() {
                    out.push(Violation::new(
                        ViolationKind::MissingContextSource,
                        format!("context source {} does not exist", src.display()),
                    ));
                } else {
                    check_links(&src, out);
                }
            }
        }
        if !entry.to.is_absolute() {
            out.push(Violation::new(
                ViolationKind::RelativeTarget,
                format!("context target {} is not absolute", entry.to.display()),
            ));
            continue;
        }
        match paths::normalize(&entry.to) {
            Some(norm) if norm != Path::new("/") => {
                if let Some(other) = targets
                    .iter()
                    .find(|t| t.starts_with(&norm) || norm.starts_with(t))
                {
                    out.push(Violation::new(
                        ViolationKind::OverlappingTargets,
                        format!("context targets {} and {} overlap", other.display(), norm.display()),
                    ));
                }
                targets.push(norm);
            }
            _ => out.push(Violation::new(
                ViolationKind::PathEscape,
                format!("context target {} escapes the workspace", entry.to.display()),
            )),
        }
    }
}

/// Symlinks inside a context source must point inside that source.
fn check_links(root: &Path, out: &mut Vec<Violation>) {
    let mut stack = vec![root.to_path_buf()];
    while let Some(path) = stack.pop() {
        let Ok(meta) = std::fs::symlink_metadata(&path) else { continue };
        if meta.file_type().is_symlink() {
            let Ok(target) = std::fs::read_link(&path) else { continue };
            let parent = path.parent().unwrap_or(root);
            let resolved = if target.is_absolute() {
                paths::normalize(&target)
            } else {
                paths::normalize(&parent.join(&target))
            };
            let inside = match (resolved, paths::normalize(root)) {
                (Some(r), Some(base)) => r.starts_with(base),
                _ => false,
            };
            if !inside || path == root {
                out.push(Violation::new(
                    ViolationKind::LinkEscape,
                    format!("symlink {} points outside its context entry", path.display()),
                ));
            }
        } else if meta.is_dir() {
            if let Ok(rd) = std::fs::read_dir(&path) {
                stack.extend(rd.filter_map(|e| e.ok()).map(|e| e.path()));
            }
        }
    }
}

fn check_servers(cfg: &TaskConfig, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for s in &cfg.mcp_servers {
        if !seen.insert(s.server_id.as_str()) {
            out.push(Violation::new(
                ViolationKind::DuplicateServerId,
                format!("server_id `{}` declared more than once", s.server_id),
            ));
        }
        if s.argv.is_empty() || s.argv[0].is_empty() {
            out.push(Violation::new(
                ViolationKind::EmptyArgv,
                format!("MCP server `{}` has an empty argv", s.server_id),
            ));
        }
    }
}

fn check_queries(queries: &[StateQuerySpec], out: &mut Vec<Violation>) {
    let mut emit = HashSet::new();
    for q in queries {
        if q.interval_ms < MIN_QUERY_INTERVAL_MS {
            out.push(Violation::new(
                ViolationKind::InvalidQuery,
                format!("query `{}` interval_ms must be >= {MIN_QUERY_INTERVAL_MS}", q.query_id),
            ));
        }
        let target_ok = match (&q.kind, &q.target) {
            (QueryKind::FileJson, QueryTarget::Path(p)) => !p.is_empty(),
            (QueryKind::CommandJson, QueryTarget::Argv(a)) => !a.is_empty(),
            _ => false,
        };
        if !target_ok {
            out.push(Violation::new(
                ViolationKind::InvalidQuery,
                format!("query `{}` target does not match kind {:?}", q.query_id, q.kind),
            ));
        }
        if q.emit_as.is_empty() || !emit.insert(q.emit_as.as_str()) {
            out.push(Violation::new(
                ViolationKind::DuplicateEmitAs,
                format!("query `{}` emit_as `{}` is empty or reused", q.query_id, q.emit_as),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::parse_task_config;

    fn base() -> TaskConfig {
        parse_task_config(
            r#"{
                "task_id": "t1",
                "instruction": "x",
                "app": {"name": "demo", "argv": ["/bin/true"]},
                "key_steps": [
                    {"step_id": "s1", "signal": "a"},
                    {"step_id": "s2", "signal": "b", "ordered_after": "s1"}
                ],
                "final_goal": {"step_id": "goal", "signal": "c"}
            }"#,
        )
        .unwrap()
    }

    fn kinds(v: &[Violation]) -> Vec<ViolationKind> {
        v.iter().map(|v| v.kind).collect()
    }

    #[test]
    fn valid_config_has_no_violations() {
        assert_eq!(validate_task_config(&base(), Path::new(".")), vec![]);
    }

    #[test]
    fn duplicate_step_id() {
        let mut cfg = base();
        cfg.key_steps[1].step_id = "s1".into();
        cfg.key_steps[1].ordered_after = None;
        assert_eq!(kinds(&validate_task_config(&cfg, Path::new("."))), vec![ViolationKind::DuplicateStepId]);
    }

    #[test]
    fn goal_reusing_step_id() {
        let mut cfg = base();
        cfg.final_goal.step_id = "s2".into();
        assert_eq!(kinds(&validate_task_config(&cfg, Path::new("."))), vec![ViolationKind::DuplicateStepId]);
    }

    #[test]
    fn reversed_dependency_is_order_cycle() {
        let mut cfg = base();
        cfg.key_steps[0].ordered_after = Some("s2".into());
        cfg.key_steps[1].ordered_after = None;
        assert_eq!(kinds(&validate_task_config(&cfg, Path::new("."))), vec![ViolationKind::OrderCycle]);
    }

    #[test]
    fn self_dependency_is_order_cycle() {
        let mut cfg = base();
        cfg.key_steps[1].ordered_after = Some("s2".into());
        assert_eq!(kinds(&validate_task_config(&cfg, Path::new("."))), vec![ViolationKind::OrderCycle]);
    }

    #[test]
    fn unknown_predecessor() {
        let mut cfg = base();
        cfg.key_steps[1].ordered_after = Some("zz".into());
        assert_eq!(kinds(&validate_task_config(&cfg, Path::new("."))), vec![ViolationKind::UnknownStep]);
    }

    #[test]
    fn predicate_shapes() {
        let mk = |op, value| PayloadPredicate { path: "a.b".into(), op, value };
        assert!(check_predicate(&mk(PredicateOp::Exists, None)).is_ok());
        assert!(check_predicate(&mk(PredicateOp::Exists, Some(Value::from(1)))).is_err());
        assert!(check_predicate(&mk(PredicateOp::NumberInRange, Some(serde_json::json!([1, 2])))).is_ok());
        assert!(check_predicate(&mk(PredicateOp::NumberInRange, Some(serde_json::json!([3, 2])))).is_err());
        assert!(check_predicate(&mk(PredicateOp::NumberInRange, Some(serde_json::json!(["a", 2])))).is_err());
        assert!(check_predicate(&mk(PredicateOp::Equals, None)).is_err());
        assert!(check_predicate(&mk(PredicateOp::Equals, Some(serde_json::json!({"x": 1})))).is_err());
        let bad_path = PayloadPredicate { path: "a..b".into(), op: PredicateOp::Exists, value: None };
        assert!(check_predicate(&bad_path).is_err());
    }

    #[test]
    fn context_checks() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        let mut cfg = base();
        cfg.context_data = vec![
            crate::task::ContextDataEntry { from: "data".into(), to: "/root/app".into() },
            crate::task::ContextDataEntry { from: "missing".into(), to: "/root/app/sub".into() },
            crate::task::ContextDataEntry { from: "../up".into(), to: "rel".into() },
        ];
        let got = kinds(&validate_task_config(&cfg, dir.path()));
        assert_eq!(
            got,
            vec![
                ViolationKind::MissingContextSource,
                ViolationKind::OverlappingTargets,
                ViolationKind::PathEscape,
                ViolationKind::RelativeTarget,
            ]
        );
    }

    #[test]
    fn escaping_symlink_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        std::fs::create_dir(&data).unwrap();
        std::os::unix::fs::symlink("/etc/passwd", data.join("out")).unwrap();
        std::os::unix::fs::symlink("inner.txt", data.join("ok")).unwrap();
        let mut cfg = base();
        cfg.context_data = vec![crate::task::ContextDataEntry { from: "data".into(), to: "/d".into() }];
        assert_eq!(kinds(&validate_task_config(&cfg, dir.path())), vec![ViolationKind::LinkEscape]);
    }

    #[test]
    fn query_checks() {
        let mut cfg = base();
        let q = StateQuerySpec {
            query_id: "q".into(),
            kind: QueryKind::FileJson,
            target: QueryTarget::Argv(vec!["x".into()]),
            interval_ms: 5,
            emit_as: "e".into(),
            extract: vec![],
        };
        cfg.state_queries = vec![q.clone(), q];
        let got = kinds(&validate_task_config(&cfg, Path::new(".")));
        assert_eq!(got.iter().filter(|k| **k == ViolationKind::InvalidQuery).count(), 4);
        assert_eq!(got.iter().filter(|k| **k == ViolationKind::DuplicateEmitAs).count(), 1);
    }

    #[test]
    fn validation_is_pure() {
        let cfg = base();
        let a = validate_task_config(&cfg, Path::new("/nonexistent"));
        let b = validate_task_config(&cfg, Path::new("/nonexistent"));
        assert_eq!(a, b);
    }
}
