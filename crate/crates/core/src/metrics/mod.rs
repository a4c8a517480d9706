//! Success rate, key-step completion rate, difficulty buckets and failure
//! distributions over attempt records, plus report rendering.

mod percent;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use percent::Percent;
pub use report::{emit_report, ReportFormat};

use crate::run::AttemptRecord;
use crate::verify::FailureReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no attempts")]
    EmptyInput,
    #[error("no attempt has annotated key steps")]
    NoKeyStepTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DifficultyLevel {
    Easy,
    Medium,
    Hard,
}

impl DifficultyLevel {
    pub fn name(self) -> &'static str {
        match self {
            DifficultyLevel::Easy => "Easy",
            DifficultyLevel::Medium => "Medium",
            DifficultyLevel::Hard => "Hard",
        }
    }
}

/// `0..=5` Easy, `6..=10` Medium, `11..` Hard.
pub fn bucket_difficulty(step_count: u32) -> DifficultyLevel {
    match step_count {
        0..=5 => DifficultyLevel::Easy,
        6..=10 => DifficultyLevel::Medium,
        _ => DifficultyLevel::Hard,
    }
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Share of attempts whose goal completed in time.
pub fn success_rate(attempts: &[AttemptRecord]) -> Result<Percent, MetricsError> {
    if attempts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let ok = attempts.iter().filter(|a| a.success()).count();
    Ok(Percent::from_fraction(&ratio(ok, attempts.len())))
}

/// Mean over attempts of completed/total key steps. Attempts whose task
/// has no key steps are left out.
pub fn kscr(attempts: &[AttemptRecord]) -> Result<Percent, MetricsError> {
    if attempts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let counted: Vec<_> = attempts.iter().filter(|a| a.verdict.key_steps_total > 0).collect();
    if counted.is_empty() {
        return Err(MetricsError::NoKeyStepTasks);
    }
    let sum = counted.iter().fold(BigRational::zero(), |acc, a| {
        acc + ratio(a.verdict.key_steps_completed as usize, a.verdict.key_steps_total as usize)
    });
    Ok(Percent::from_fraction(&(sum / BigInt::from(counted.len()))))
}

/// Share of failed attempts per reason; reasons with no failures are
/// omitted, so no failures gives an empty map.
pub fn failure_table(attempts: &[AttemptRecord]) -> BTreeMap<FailureReason, Percent> {
    let mut counts: BTreeMap<FailureReason, usize> = BTreeMap::new();
    for reason in attempts.iter().filter_map(AttemptRecord::failure_reason) {
        *counts.entry(reason).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(r, n)| (r, Percent::from_fraction(&ratio(n, total))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    pub n_attempts: usize,
    pub sr: Percent,
    #[serde(default)]
    pub kscr: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(rename = "sr")]
    pub sr_percent: Percent,
    /// Absent when no attempt had key steps.
    #[serde(rename = "kscr", default)]
    pub kscr_percent: Option<Percent>,
    pub by_difficulty: BTreeMap<DifficultyLevel, Percent>,
    pub failure_distribution: BTreeMap<FailureReason, Percent>,
    /// Keyed by modality label (`hybrid`, `gui-nobash`, ...).
    pub by_modality: BTreeMap<String, ModalityMetrics>,
    pub n_attempts: usize,
    pub n_tasks: usize,
}

pub fn summarize(attempts: &[AttemptRecord]) -> Result<MetricsSummary, MetricsError> {
    let sr = success_rate(attempts)?;
    let kscr_of = |set: &[AttemptRecord]| kscr(set).ok();
    let mut by_level: BTreeMap<DifficultyLevel, Vec<AttemptRecord>> = BTreeMap::new();
    let mut by_mod: BTreeMap<String, Vec<AttemptRecord>> = BTreeMap::new();
    for a in attempts {
        by_level.entry(bucket_difficulty(a.difficulty_steps)).or_default().push(a.clone());
        by_mod.entry(a.modality.label()).or_default().push(a.clone());
    }
    Ok(MetricsSummary {
        sr_percent: sr,
        kscr_percent: kscr_of(attempts),
        by_difficulty: by_level
            .into_iter()
            .map(|(l, set)| (l, success_rate(&set).expect("bucket is non-empty")))
            .collect(),
        failure_distribution: failure_table(attempts),
        by_modality: by_mod
            .into_iter()
            .map(|(label, set)| {
                let m = ModalityMetrics {
                    n_attempts: set.len(),
                    sr: success_rate(&set).expect("group is non-empty"),
                    kscr: kscr_of(&set),
                };
                (label, m)
            })
            .collect(),
        n_attempts: attempts.len(),
        n_tasks: attempts.iter().map(|a| a.task_id.as_str()).collect::<BTreeSet<_>>().len(),
    })
}
