use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::mcp::ToolResult;
use crate::paths;

#[derive(Debug, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum EditOp {
    View {
        path: String,
        #[serde(default)]
        view_range: Option<[i64; 2]>,
    },
    Create {
        path: String,
        file_text: String,
    },
    StrReplace {
        path: String,
        old_str: String,
        #[serde(default)]
        new_str: String,
    },
    Insert {
        path: String,
        insert_line: usize,
        new_str: String,
    },
    UndoEdit {
        #[serde(default)]
        path: Option<String>,
    },
}

/// File viewer/editor confined to one workspace, with undo history for the
/// current attempt.
#[derive(Debug)]
pub struct Editor {
    workspace: PathBuf,
    /// (file, contents before the mutation; `None` if it did not exist)
    history: Vec<(PathBuf, Option<Vec<u8>>)>,
}

impl Editor {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Self {
            workspace: workspace.into(),
            history: Vec::new(),
        }
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    fn resolve(&self, path: &str) -> Result<PathBuf, String> {
        paths::confine(&self.workspace, Path::new(path)).ok_or_else(|| format!("path `{path}` escapes the workspace"))
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<(), String> {
        let prior = std::fs::read(&path).ok();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
        std::fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.history.push((path, prior));
        Ok(())
    }

    fn read_text(path: &Path) -> Result<String, String> {
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
    }
}

/// Runs one editor command (`view`, `create`, `str_replace`, `insert`,
/// `undo_edit`) given the tool's JSON input.
pub fn edit_action(editor: &mut Editor, args: &Value) -> ToolResult {
    let op: EditOp = match serde_json::from_value(args.clone()) {
        Ok(op) => op,
        Err(e) => return ToolResult::error(format!("invalid editor input: {e}")),
    };
    match run(editor, op) {
        Ok(out) => ToolResult::output(out),
        Err(e) => ToolResult::error(e),
    }
}

fn run(ed: &mut Editor, op: EditOp) -> Result<String, String> {
    match op {
        EditOp::View { path, view_range } => {
            let file = ed.resolve(&path)?;
            if file.is_dir() {
                let mut names: Vec<String> = std::fs::read_dir(&file)
                    .map_err(|e| e.to_string())?
                    .filter_map(Result::ok)
                    .map(|e| {
                        let mut n = e.file_name().to_string_lossy().into_owned();
                        if e.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                            n.push('/');
                        }
                        n
                    })
                    .collect();
                names.sort();
                return Ok(names.join("\n"));
            }
            let text = Editor::read_text(&file)?;
            let lines: Vec<&str> = text.lines().collect();
            let (start, end) = match view_range {
                None => (1, lines.len()),
                Some([s, e]) => {
                    let end = if e == -1 { lines.len() as i64 } else { e };
                    if s < 1 || end < s || end as usize > lines.len() {
                        return Err(format!("invalid view_range [{s}, {e}] for {} lines", lines.len()));
                    }
                    (s as usize, end as usize)
                }
            };
            Ok(lines[start.saturating_sub(1)..end]
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{}: {l}", start + i))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        EditOp::Create { path, file_text } => {
            let file = ed.resolve(&path)?;
            ed.write(file, file_text.as_bytes())?;
            Ok(format!("created {path}"))
        }
        EditOp::StrReplace { path, old_str, new_str } => {
            let file = ed.resolve(&path)?;
            let text = Editor::read_text(&file)?;
            let count = if old_str.is_empty() { 0 } else { text.matches(&old_str).count() };
            if count != 1 {
                return Err(format!("found {count} occurrences of old_str in {path}; expected exactly 1"));
            }
            let updated = text.replacen(&old_str, &new_str, 1);
            ed.write(file, updated.as_bytes())?;
            Ok(format!("replaced 1 occurrence in {path}"))
        }
        EditOp::Insert { path, insert_line, new_str } => {
            let file = ed.resolve(&path)?;
            let text = Editor::read_text(&file)?;
            let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
            if insert_line > lines.len() {
                return Err(format!("insert_line {insert_line} is past the end ({} lines)", lines.len()));
            }
            let mut block = new_str.clone();
            if !block.ends_with('\n') {
                block.push('\n');
            }
            // the line we insert after may lack a trailing newline
            let mut fixed_last = String::new();
            if insert_line > 0 && !lines[insert_line - 1].ends_with('\n') {
                fixed_last = format!("{}\n", lines[insert_line - 1]);
            }
            if !fixed_last.is_empty() {
                lines[insert_line - 1] = &fixed_last;
            }
            lines.insert(insert_line, &block);
            ed.write(file, lines.concat().as_bytes())?;
            Ok(format!("inserted after line {insert_line} of {path}"))
        }
        EditOp::UndoEdit { path } => {
            let target = path.as_deref().map(|p| ed.resolve(p)).transpose()?;
            let idx = ed
                .history
                .iter()
                .rposition(|(p, _)| target.as_ref().is_none_or(|t| t == p))
                .ok_or_else(|| "no edit to undo".to_string())?;
            let (file, prior) = ed.history.remove(idx);
            match prior {
                Some(bytes) => std::fs::write(&file, bytes).map_err(|e| e.to_string())?,
                None => std::fs::remove_file(&file).map_err(|e| e.to_string())?,
            }
            Ok(format!("undid last edit to {}", file.strip_prefix(&ed.workspace).unwrap_or(&file).display()))
        }
    }
}
