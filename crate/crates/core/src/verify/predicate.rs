use serde_json::{Map, Value};

use super::ProbeEvent;
use crate::task::{KeyStepSpec, PayloadPredicate, PredicateOp};

/// Resolves a dot-separated path; numeric segments index into arrays.
pub fn lookup<'a>(payload: &'a Map<String, Value>, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = payload.get(parts.next()?)?;
    for part in parts {
        cur = match cur {
            Value::Object(m) => m.get(part)?,
            Value::Array(items) => items.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn same_scalar(a: &Value, b: &Value) -> bool {
    match (a, b) {
        // 1 and 1.0 are the same number
        (Value::Number(x), Value::Number(y)) => x == y || x.as_f64().zip(y.as_f64()).is_some_and(|(x, y)| x == y),
        _ => a == b,
    }
}

/// Evaluates one predicate against an event payload. Missing paths fail
/// every operator.
pub fn eval_predicate(pred: &PayloadPredicate, payload: &Map<String, Value>) -> bool {
    let Some(found) = lookup(payload, &pred.path) else {
        return false;
    };
    match pred.op {
        PredicateOp::Exists => !found.is_null(),
        PredicateOp::Equals => pred.value.as_ref().is_some_and(|want| same_scalar(found, want)),
        PredicateOp::Contains => match (found, pred.value.as_ref()) {
            (Value::String(hay), Some(Value::String(needle))) => hay.contains(needle.as_str()),
            (Value::Array(items), Some(want)) => items.iter().any(|i| same_scalar(i, want)),
            _ => false,
        },
        PredicateOp::NumberInRange => {
            let bounds = pred.value.as_ref().and_then(Value::as_array);
            match (found.as_f64(), bounds.map(Vec::as_slice)) {
                (Some(n), Some([lo, hi])) => match (lo.as_f64(), hi.as_f64()) {
                    (Some(lo), Some(hi)) => lo <= n && n <= hi,
                    _ => false,
                },
                _ => false,
            }
        }
    }
}

/// True when `event` is the step's signal and every predicate holds on
/// its payload.
pub fn step_matches(step: &KeyStepSpec, event: &ProbeEvent) -> bool {
    step.signal == event.event && step.predicates.iter().all(|p| eval_predicate(p, &event.payload))
}
