use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use super::agent::Agent;
use super::attempt::{run_attempt, AttemptOptions, DEFAULT_READY_TIMEOUT, DEFAULT_SETTLE, DEFAULT_TEARDOWN_GRACE};
use super::record::{AttemptRecord, RunConfig, RunReport};
use crate::task::{SuiteManifest, TaskConfig, TaskError, Vars};
use crate::tools::Modality;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("manifest error: {0}")]
    Manifest(#[from] TaskError),
    #[error("attempts per task must be at least 1")]
    NoAttempts,
    #[error("no task with id `{0}`")]
    UnknownTask(String),
    #[error("cannot write run output {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Builds a fresh agent for each attempt.
pub type AgentFactory<'a> = dyn Fn(&TaskConfig, Modality) -> Box<dyn Agent> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub attempts_per_task: u32,
    /// How many tasks may run at once; attempts of one task stay serial.
    pub parallel: usize,
    pub task_filter: Option<String>,
    pub vars: Vars,
    pub settle: Duration,
    pub teardown_grace: Duration,
    pub ready_timeout: Duration,
    pub keep_workspaces: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, attempts_per_task: u32) -> Self {
        Self {
            out_dir: out_dir.into(),
            attempts_per_task,
            parallel: 1,
            task_filter: None,
            vars: Vars::new(),
            settle: DEFAULT_SETTLE,
            teardown_grace: DEFAULT_TEARDOWN_GRACE,
            ready_timeout: DEFAULT_READY_TIMEOUT,
            keep_workspaces: false,
        }
    }
}

/// Runs every selected task `attempts_per_task` times and writes
/// `report.json` under `out_dir`. Attempt failures, including setup
/// failures, are recorded rather than returned.
pub fn run_suite(
    manifest: &SuiteManifest,
    modality: Modality,
    factory: &AgentFactory<'_>,
    opts: &RunOptions,
) -> Result<RunReport, RunError> {
    if opts.attempts_per_task == 0 {
        return Err(RunError::NoAttempts);
    }
    let mut tasks: Vec<TaskConfig> = manifest.load_tasks()?.into_iter().map(|t| t.config).collect();
    if let Some(id) = &opts.task_filter {
        tasks.retain(|t| &t.task_id == id);
        if tasks.is_empty() {
            return Err(RunError::UnknownTask(id.clone()));
        }
    }
    tasks.retain(|t| {
        let ok = t.permits(modality.kind);
        if !ok {
            log::info!("skipping {}: modality {modality} not permitted", t.task_id);
        }
        ok
    });

    let slots: Vec<Mutex<Vec<AttemptRecord>>> = tasks.iter().map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(task) = tasks.get(i) else { break };
        let mut out = Vec::with_capacity(opts.attempts_per_task as usize);
        for n in 0..opts.attempts_per_task {
            let mut a = AttemptOptions::new(&manifest.root, &opts.out_dir);
            a.attempt_index = n;
            a.vars = opts.vars.clone();
            a.settle = opts.settle;
            a.teardown_grace = opts.teardown_grace;
            a.ready_timeout = opts.ready_timeout;
            a.keep_workspace = opts.keep_workspaces;
            let rec = run_attempt(task, modality, factory(task, modality), &a);
            log::info!(
                "{} [{modality}] #{n}: success={} steps={}/{}",
                task.task_id,
                rec.verdict.success,
                rec.verdict.key_steps_completed,
                rec.verdict.key_steps_total
            );
            out.push(rec);
        }
        *slots[i].lock().unwrap() = out;
    };
    std::thread::scope(|s| {
        for _ in 0..opts.parallel.clamp(1, tasks.len().max(1)) {
            s.spawn(worker);
        }
    });

    let attempts = slots.into_iter().flat_map(|m| m.into_inner().unwrap()).collect();
    let report = RunReport::new(
        &manifest.suite_name,
        RunConfig {
            modality: modality.kind,
            bash_enabled: modality.bash_enabled,
            attempts_per_task: opts.attempts_per_task,
        },
        attempts,
    );
    write_report(&report, &opts.out_dir)?;
    Ok(report)
}

pub fn write_report(report: &RunReport, out_dir: &std::path::Path) -> Result<(), RunError> {
    let path = out_dir.join("report.json");
    std::fs::create_dir_all(out_dir)
        .and_then(|_| std::fs::write(&path, crate::metrics::emit_report(report, crate::metrics::ReportFormat::Json)))
        .map_err(|source| RunError::Output { path, source })
}
