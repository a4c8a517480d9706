//! Child-process helpers shared by the app launcher, shell tool, MCP client
//! and command-backed state queries.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Upper bound on bytes retained from a single captured stream.
pub const CAPTURE_LIMIT: usize = 8 * 1024 * 1024;

/// A byte buffer filled by a background thread draining a pipe.
#[derive(Debug, Clone, Default)]
pub struct Capture(Arc<Mutex<Vec<u8>>>);

impl Capture {
    pub fn snapshot(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }

    /// Spawns a thread that reads `src` to EOF. Bytes past [`CAPTURE_LIMIT`]
    /// are read and discarded so the child never blocks on a full pipe.
    pub fn drain<R: Read + Send + 'static>(mut src: R) -> (Capture, JoinHandle<()>) {
        let cap = Capture::default();
        let sink = cap.clone();
        let handle = std::thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match src.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let mut guard = sink.0.lock().unwrap();
                        let room = CAPTURE_LIMIT.saturating_sub(guard.len());
                        guard.extend_from_slice(&buf[..n.min(room)]);
                    }
                }
            }
        });
        (cap, handle)
    }
}

/// Puts the child in its own process group so signals reach its descendants.
pub fn own_process_group(cmd: &mut Command) -> &mut Command {
    cmd.process_group(0)
}

/// Sends `sig` to the process group led by `pid`, falling back to the pid.
pub fn signal_group(pid: u32, sig: libc::c_int) {
    let pid = pid as libc::pid_t;
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe {
        if libc::kill(-pid, sig) != 0 {
            libc::kill(pid, sig);
        }
    }
}

/// Polls `child` until it exits or `timeout` elapses.
pub fn wait_until(child: &mut Child, timeout: Duration) -> std::io::Result<Option<ExitStatus>> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(5)));
    }
}

/// Kills the whole group with SIGKILL and reaps the child.
pub fn kill_and_reap(child: &mut Child) -> Option<ExitStatus> {
    signal_group(child.id(), libc::SIGKILL);
    child.wait().ok()
}

#[derive(Debug)]
pub struct CommandOutput {
    pub status: ExitStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl CommandOutput {
    /// `exit=<code>`, or `signal=<n>` for signal deaths.
    pub fn status_label(&self) -> String {
        status_label(&self.status)
    }
}

pub fn status_label(status: &ExitStatus) -> String {
    match (status.code(), status.signal()) {
        (Some(code), _) => format!("exit={code}"),
        (None, Some(sig)) => format!("signal={sig}"),
        (None, None) => "exit=?".to_owned(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("failed to spawn `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("command timed out")]
    TimedOut,
    #[error("wait failed: {0}")]
    Wait(#[source] std::io::Error),
}

/// Runs `cmd` to completion with stdout/stderr captured, killing its whole
/// process group if `timeout` elapses first.
pub fn run_with_timeout(mut cmd: Command, timeout: Duration) -> Result<CommandOutput, RunError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    own_process_group(&mut cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|source| RunError::Spawn { program, source })?;
    let (out, out_h) = Capture::drain(child.stdout.take().expect("piped stdout"));
    let (err, err_h) = Capture::drain(child.stderr.take().expect("piped stderr"));
    let waited = wait_until(&mut child, timeout).map_err(RunError::Wait);
    let status = match waited {
        Ok(Some(status)) => status,
        Ok(None) => {
            kill_and_reap(&mut child);
            let _ = out_h.join();
            let _ = err_h.join();
            return Err(RunError::TimedOut);
        }
        Err(e) => {
            kill_and_reap(&mut child);
            return Err(e);
        }
    };
    // A background grandchild may still hold the pipes open.
    signal_group(child.id(), libc::SIGKILL);
    let _ = out_h.join();
    let _ = err_h.join();
    Ok(CommandOutput {
        status,
        stdout: out.snapshot(),
        stderr: err.snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut c = Command::new("/bin/sh");
        c.arg("-c").arg(script);
        c
    }

    #[test]
    fn captures_both_streams() {
        let out = run_with_timeout(sh("echo out; echo err >&2; exit 4"), Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout, b"out\n");
        assert_eq!(out.stderr, b"err\n");
        assert_eq!(out.status_label(), "exit=4");
    }

    #[test]
    fn times_out() {
        let start = Instant::now();
        let res = run_with_timeout(sh("sleep 5"), Duration::from_millis(100));
        assert!(matches!(res, Err(RunError::TimedOut)));
        assert!(start.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn spawn_failure() {
        let res = run_with_timeout(Command::new("/nonexistent/bin"), Duration::from_secs(1));
        assert!(matches!(res, Err(RunError::Spawn { .. })));
    }
}
