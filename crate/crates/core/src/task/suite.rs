use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::load::parse_strict;
use super::{load_task_config, TaskConfig, TaskError};
use crate::env::AppSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    suite_name: String,
    #[serde(default)]
    tasks: Vec<PathBuf>,
    #[serde(default)]
    app_catalog: BTreeMap<String, AppSpec>,
}

/// A suite: named list of task files plus per-app launch defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteManifest {
    pub suite_name: String,
    /// Directory containing the manifest; context-data sources resolve here.
    pub root: PathBuf,
    /// Task file paths, resolved relative to `root`.
    pub tasks: Vec<PathBuf>,
    pub app_catalog: BTreeMap<String, AppSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteTask {
    pub path: PathBuf,
    pub config: TaskConfig,
}

pub fn load_suite_manifest(path: &Path) -> Result<SuiteManifest, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_owned(),
        source,
    })?;
    let file: ManifestFile = parse_strict(&text)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for rel in file.tasks {
        let resolved = root.join(rel);
        if !resolved.is_file() {
            return Err(TaskError::MissingTaskFile(resolved));
        }
        tasks.push(resolved);
    }
    Ok(SuiteManifest {
        suite_name: file.suite_name,
        root,
        tasks,
        app_catalog: file.app_catalog,
    })
}

impl SuiteManifest {
    /// Loads every task, applies app-catalog defaults and checks that task
    /// ids are unique across the suite.
    pub fn load_tasks(&self) -> Result<Vec<SuiteTask>, TaskError> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.tasks.len());
        for path in &self.tasks {
            let mut config = load_task_config(path)?;
            if let Some(defaults) = self.app_catalog.get(&config.app.name) {
                config.app.apply_defaults(defaults);
            }
            if !seen.insert(config.task_id.clone()) {
                return Err(TaskError::DuplicateTaskId(config.task_id));
            }
            out.push(SuiteTask {
                path: path.clone(),
                config,
            });
        }
        Ok(out)
    }
}
