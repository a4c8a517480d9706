use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use super::TaskConfig;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("task file not found: {0}")]
    MissingTaskFile(PathBuf),
    #[error("duplicate task_id `{0}` in suite")]
    DuplicateTaskId(String),
}

impl TaskError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        TaskError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Reads and parses a task config file, applying defaults.
pub fn load_task_config(path: &Path) -> Result<TaskConfig, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_task_config(&text)
}

/// Parses task config text. Field-level checks that the type system cannot
/// express (`timeout_s >= 1`) are reported as schema errors here.
pub fn parse_task_config(text: &str) -> Result<TaskConfig, TaskError> {
    let cfg: TaskConfig = parse_strict(text)?;
    if cfg.timeout_s < 1 {
        return Err(TaskError::schema("timeout_s", "must be at least 1 second"));
    }
    Ok(cfg)
}

pub(crate) fn parse_strict<T: DeserializeOwned>(text: &str) -> Result<T, TaskError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        classify(inner, path)
    })?;
    de.end().map_err(|e| classify(e, String::new()))?;
    Ok(value)
}

fn classify(err: serde_json::Error, path: String) -> TaskError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => {
            let message = strip_position(&err.to_string());
            let field = match backticked(&message) {
                // missing-field errors point at the parent object
                Some(name) if message.starts_with("missing field") => {
                    if path.is_empty() || path == "." {
                        name.to_owned()
                    } else {
                        format!("{path}.{name}")
                    }
                }
                _ => path,
            };
            TaskError::Schema { field, message }
        }
        Category::Syntax | Category::Eof | Category::Io => TaskError::Parse {
            line: err.line(),
            column: err.column(),
            message: strip_position(&err.to_string()),
        },
    }
}

fn backticked(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(idx) => message[..idx].to_owned(),
        None => message.to_owned(),
    }
}
