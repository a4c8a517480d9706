//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists, converted through the standard `json` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;

use ::whitebench::env;
use ::whitebench::metrics::{self, ReportFormat};
use ::whitebench::run::{self, AttemptOptions, AttemptRecord, RunOptions, RunReport, ScriptedPlan};
use ::whitebench::task::{self, ContextDataEntry, TaskConfig, Vars};
use ::whitebench::tools::{self, GuiManifest, Modality, ModalityKind, SimulatedScreen};
use ::whitebench::verify::{self, MilestoneMachine, ProbeEvent};

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn modality(name: &str, bash: bool) -> PyResult<Modality> {
    let kind: ModalityKind = name.parse().map_err(PyValueError::new_err)?;
    Ok(Modality::new(kind, bash))
}

fn vars_from(map: Option<std::collections::BTreeMap<String, String>>) -> Vars {
    let mut v = Vars::new();
    for (k, val) in map.unwrap_or_default() {
        v.set(k, val);
    }
    v
}

fn task_err(e: task::TaskError) -> PyErr {
    match e {
        task::TaskError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A loaded task configuration.
#[pyclass(name = "Task", module = "whitebench", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTask {
    inner: TaskConfig,
}

#[pymethods]
impl PyTask {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: task::parse_task_config(text).map_err(task_err)?,
        })
    }

    #[getter]
    fn task_id(&self) -> &str {
        &self.inner.task_id
    }

    #[getter]
    fn instruction(&self) -> &str {
        &self.inner.instruction
    }

    #[getter]
    fn timeout_s(&self) -> u64 {
        self.inner.timeout_s
    }

    #[getter]
    fn difficulty_steps(&self) -> u32 {
        self.inner.difficulty_steps
    }

    #[getter]
    fn difficulty(&self) -> &'static str {
        metrics::bucket_difficulty(self.inner.difficulty_steps).name()
    }

    /// Key step ids in order, final goal last.
    #[getter]
    fn step_ids(&self) -> Vec<String> {
        self.inner.step_ids().map(str::to_owned).collect()
    }

    fn permits(&self, modality: &str) -> PyResult<bool> {
        let kind: ModalityKind = modality.parse().map_err(PyValueError::new_err)?;
        Ok(self.inner.permits(kind))
    }

    /// Returns a list of `{"kind", "detail"}` dicts; empty when valid.
    #[pyo3(signature = (suite_root = "."))]
    fn validate<'py>(&self, py: Python<'py>, suite_root: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &task::validate_task_config(&self.inner, &PathBuf::from(suite_root)))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Task({:?})", self.inner.task_id)
    }
}

#[pyfunction]
fn load_task(path: PathBuf) -> PyResult<PyTask> {
    Ok(PyTask {
        inner: task::load_task_config(&path).map_err(task_err)?,
    })
}

/// Tasks of a suite manifest with app-catalog defaults applied.
#[pyfunction]
fn load_suite(manifest: PathBuf) -> PyResult<Vec<PyTask>> {
    let suite = task::load_suite_manifest(&manifest).map_err(task_err)?;
    Ok(suite
        .load_tasks()
        .map_err(task_err)?
        .into_iter()
        .map(|t| PyTask { inner: t.config })
        .collect())
}

/// Tracks key-step and goal completion for one task.
#[pyclass(name = "MilestoneMachine", module = "whitebench")]
struct PyMachine {
    inner: MilestoneMachine,
}

#[pymethods]
impl PyMachine {
    #[new]
    fn new(task: &PyTask) -> Self {
        Self {
            inner: verify::register_handlers(&task.inner),
        }
    }

    /// Feeds one event (wire line or dict); returns the step ids it completed.
    fn advance(&mut self, event: &Bound<'_, PyAny>) -> PyResult<Vec<String>> {
        let ev: ProbeEvent = if event.is_instance_of::<PyString>() {
            let line: String = event.extract()?;
            ProbeEvent::parse(line.as_bytes()).map_err(|e| PyValueError::new_err(e.0))?
        } else {
            from_py(event)?
        };
        Ok(self.inner.advance(&ev).into_iter().map(|t| t.step_id).collect())
    }

    fn status<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.status())
    }

    #[getter]
    fn events_processed(&self) -> u64 {
        self.inner.events_processed()
    }

    #[pyo3(signature = (deadline_exceeded = false, elapsed_ms = 0))]
    fn verdict<'py>(&self, py: Python<'py>, deadline_exceeded: bool, elapsed_ms: u64) -> PyResult<Bound<'py, PyAny>> {
        let v = verify::verdict(&self.inner, deadline_exceeded, elapsed_ms, self.inner.events_processed());
        to_py(py, &v)
    }
}

#[pyfunction]
fn parse_event<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyAny>> {
    let ev = ProbeEvent::parse(line.as_bytes()).map_err(|e| PyValueError::new_err(e.0))?;
    to_py(py, &ev)
}

#[pyfunction]
fn bucket_difficulty(steps: u32) -> &'static str {
    metrics::bucket_difficulty(steps).name()
}

#[pyfunction]
fn summarize<'py>(py: Python<'py>, records: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let recs: Vec<AttemptRecord> = from_py(records)?;
    let s = metrics::summarize(&recs).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &s)
}

/// Renders a report dict as `json`, `csv` or `md`.
#[pyfunction]
#[pyo3(signature = (report, format = "md"))]
fn emit_report(report: &Bound<'_, PyAny>, format: &str) -> PyResult<String> {
    let mut r: RunReport = from_py(report)?;
    r.refresh_metrics();
    let fmt: ReportFormat = format.parse().map_err(PyValueError::new_err)?;
    Ok(String::from_utf8_lossy(&metrics::emit_report(&r, fmt)).into_owned())
}

#[pyfunction]
#[pyo3(signature = (task, journal, deadline_exceeded = false, elapsed_ms = 0))]
fn replay_verdict<'py>(
    py: Python<'py>,
    task: &PyTask,
    journal: PathBuf,
    deadline_exceeded: bool,
    elapsed_ms: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (v, _) = verify::replay_verdict(&task.inner, &journal, deadline_exceeded, elapsed_ms)
        .map_err(|e| PyOSError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Mirrors each `(from, to)` pair: `from` relative to `suite_root`, `to` an
/// absolute path placed under `workspace`.
#[pyfunction]
fn restore_context<'py>(
    py: Python<'py>,
    entries: Vec<(PathBuf, PathBuf)>,
    suite_root: PathBuf,
    workspace: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let entries: Vec<ContextDataEntry> = entries.into_iter().map(|(from, to)| ContextDataEntry { from, to }).collect();
    let report = py
        .detach(|| env::restore_context(&entries, &suite_root, &workspace))
        .map_err(|e| PyOSError::new_err(e.to_string()))?;
    to_py(py, &report)
}

#[pyfunction]
fn tree_digest(path: PathBuf) -> PyResult<String> {
    env::tree_digest(&path).map_err(|e| PyOSError::new_err(e.to_string()))
}

/// Local tool names a modality advertises (MCP tools depend on live servers).
#[pyfunction]
#[pyo3(signature = (modality, bash = true))]
fn local_tool_names(modality: &str, bash: bool) -> PyResult<Vec<String>> {
    let m = self::modality(modality, bash)?;
    let screen = m.kind.has_gui().then(|| {
        SimulatedScreen::new(&GuiManifest {
            width: 1,
            height: 1,
            widgets: vec![],
        })
        .expect("empty layout is valid")
    });
    let dir = std::env::temp_dir();
    let reg = tools::build_registry(m, &[], screen, &dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(reg.names().into_iter().map(str::to_owned).collect())
}

/// Runs one attempt with a scripted plan (list of step dicts) and returns
/// the attempt record.
#[pyfunction]
#[pyo3(signature = (task, modality, plan, suite_root, out_dir, bash = true, attempt_index = 0, vars = None))]
#[allow(clippy::too_many_arguments)]
fn run_attempt<'py>(
    py: Python<'py>,
    task: &PyTask,
    modality: &str,
    plan: &Bound<'py, PyAny>,
    suite_root: PathBuf,
    out_dir: PathBuf,
    bash: bool,
    attempt_index: u32,
    vars: Option<std::collections::BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = self::modality(modality, bash)?;
    let plan = ScriptedPlan::new(from_py(plan)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut opts = AttemptOptions::new(suite_root, out_dir);
    opts.attempt_index = attempt_index;
    opts.vars = vars_from(vars);
    let cfg = task.inner.clone();
    let rec = py.detach(move || run::run_attempt(&cfg, m, Box::new(run::make_scripted_agent(plan)), &opts));
    to_py(py, &rec)
}

/// Runs a suite with plans from `plans_dir` (default: `plans/` next to the
/// manifest) and returns the report.
#[pyfunction]
#[pyo3(signature = (manifest, modality, out_dir, attempts = 1, bash = true, plans_dir = None, parallel = 1, task = None, vars = None))]
#[allow(clippy::too_many_arguments)]
fn run_suite<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    modality: &str,
    out_dir: PathBuf,
    attempts: u32,
    bash: bool,
    plans_dir: Option<PathBuf>,
    parallel: usize,
    task: Option<String>,
    vars: Option<std::collections::BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = self::modality(modality, bash)?;
    let suite = task::load_suite_manifest(&manifest).map_err(task_err)?;
    let plans = plans_dir.unwrap_or_else(|| suite.root.join("plans"));
    let mut opts = RunOptions::new(out_dir, attempts);
    opts.parallel = parallel;
    opts.task_filter = task;
    opts.vars = vars_from(vars);
    let report = py
        .detach(|| {
            let factory = |t: &TaskConfig, md: Modality| run::plan_agent(&plans, &t.task_id, md);
            run::run_suite(&suite, m, &factory, &opts)
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &report)
}

/// Module initializer; public so embedders and tests can register it.
#[pymodule(name = "whitebench")]
pub fn whitebench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTask>()?;
    m.add_class::<PyMachine>()?;
    m.add_function(wrap_pyfunction!(load_task, m)?)?;
    m.add_function(wrap_pyfunction!(load_suite, m)?)?;
    m.add_function(wrap_pyfunction!(parse_event, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_difficulty, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(emit_report, m)?)?;
    m.add_function(wrap_pyfunction!(replay_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(restore_context, m)?)?;
    m.add_function(wrap_pyfunction!(tree_digest, m)?)?;
    m.add_function(wrap_pyfunction!(local_tool_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_attempt, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add("PROBE_PROTOCOL_VERSION", verify::PROBE_PROTOCOL_VERSION)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
