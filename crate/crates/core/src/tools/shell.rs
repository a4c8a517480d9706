use std::path::Path;
use std::process::Command;
use std::time::Duration;

use crate::mcp::ToolResult;
use crate::process::{self, RunError};

/// Shell output beyond this many bytes is cut and replaced by a marker.
pub const OUTPUT_LIMIT: usize = 48 * 1024;

/// Keeps the first [`OUTPUT_LIMIT`] bytes (on a char boundary) and appends
/// `⟦truncated N bytes⟧`.
pub fn truncate_output(text: String) -> String {
    if text.len() <= OUTPUT_LIMIT {
        return text;
    }
    let mut cut = OUTPUT_LIMIT;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let dropped = text.len() - cut;
    let mut out = text;
    out.truncate(cut);
    out.push_str(&format!("⟦truncated {dropped} bytes⟧"));
    out
}

/// Runs `command` with `sh -c` inside `workspace`.
///
/// Stdout comes first; stderr, if any, follows a `[stderr]` line. The exit
/// status is reported in `system` as `exit=<code>`.
pub fn shell_action(workspace: &Path, command: &str, timeout: Duration) -> ToolResult {
    let mut cmd = Command::new("/bin/sh");
    cmd.arg("-c").arg(command).current_dir(workspace);
    match process::run_with_timeout(cmd, timeout) {
        Ok(out) => {
            let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
            if !out.stderr.is_empty() {
                if !text.is_empty() && !text.ends_with('\n') {
                    text.push('\n');
                }
                text.push_str("[stderr]\n");
                text.push_str(&String::from_utf8_lossy(&out.stderr));
            }
            ToolResult::output(truncate_output(text)).with_system(out.status_label())
        }
        Err(RunError::TimedOut) => ToolResult::error("command timed out"),
        Err(e) => ToolResult::error(e.to_string()),
    }
}
