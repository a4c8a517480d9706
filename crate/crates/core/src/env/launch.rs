use std::os::unix::process::ExitStatusExt;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AppSpec;
use crate::process::{self, Capture};
use crate::task::Vars;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot spawn `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("app exited during the readiness window (code {code:?}): {stderr}")]
    EarlyExit { code: Option<i32>, stderr: String },
    #[error("app handle already terminated")]
    UsedHandle,
}

/// How a terminated app ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitOutcome {
    Exited(i32),
    Signaled(i32),
    /// Did not stop within the grace period and was force-killed.
    Killed,
}

impl From<ExitStatus> for ExitOutcome {
    fn from(status: ExitStatus) -> Self {
        match (status.code(), status.signal()) {
            (Some(code), _) => ExitOutcome::Exited(code),
            (None, Some(sig)) => ExitOutcome::Signaled(sig),
            (None, None) => ExitOutcome::Killed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LaunchOptions {
    pub vars: Vars,
    /// Overrides the spec's readiness window.
    pub readiness: Option<Duration>,
}

/// A running application under test. Dropping a live handle kills it.
#[derive(Debug)]
pub struct AppHandle {
    child: Child,
    started_at: Instant,
    stdout: Capture,
    stderr: Capture,
    drains: Vec<JoinHandle<()>>,
    terminated: bool,
}

/// Spawns the app with the probe endpoint exported through
/// `spec.probe_endpoint_env_var`, then requires it to survive the readiness
/// window.
pub fn launch_app(spec: &AppSpec, probe_endpoint: &str, opts: &LaunchOptions) -> Result<AppHandle, EnvError> {
    let argv = opts.vars.expand_all(&spec.argv);
    let Some((program, args)) = argv.split_first() else {
        return Err(EnvError::Spawn {
            program: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty argv"),
        });
    };
    let mut cmd = Command::new(program);
    cmd.args(args)
        .envs(spec.env.iter().map(|(k, v)| (k, opts.vars.expand(v))))
        .env(&spec.probe_endpoint_env_var, probe_endpoint)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = &spec.working_dir {
        cmd.current_dir(opts.vars.expand(dir));
    }
    process::own_process_group(&mut cmd);
    let mut child = cmd.spawn().map_err(|source| EnvError::Spawn {
        program: program.clone(),
        source,
    })?;
    let started_at = Instant::now();
    let (stdout, out_h) = Capture::drain(child.stdout.take().expect("piped stdout"));
    let (stderr, err_h) = Capture::drain(child.stderr.take().expect("piped stderr"));
    let mut handle = AppHandle {
        child,
        started_at,
        stdout,
        stderr,
        drains: vec![out_h, err_h],
        terminated: false,
    };

    let window = opts
        .readiness
        .unwrap_or_else(|| Duration::from_millis(spec.readiness_ms()));
    if let Ok(Some(status)) = process::wait_until(&mut handle.child, window) {
        handle.terminated = true;
        handle.join_drains();
        return Err(EnvError::EarlyExit {
            code: status.code(),
            stderr: String::from_utf8_lossy(&handle.stderr.snapshot()).into_owned(),
        });
    }
    Ok(handle)
}

impl AppHandle {
    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn started_at(&self) -> Instant {
        self.started_at
    }

    pub fn stdout(&self) -> Vec<u8> {
        self.stdout.snapshot()
    }

    pub fn stderr(&self) -> Vec<u8> {
        self.stderr.snapshot()
    }

    pub fn is_running(&mut self) -> bool {
        !self.terminated && matches!(self.child.try_wait(), Ok(None))
    }

    /// SIGTERM to the app's process group, then SIGKILL once `grace`
    /// elapses. A handle can be terminated exactly once.
    pub fn terminate(&mut self, grace: Duration) -> Result<ExitOutcome, EnvError> {
        if self.terminated {
            return Err(EnvError::UsedHandle);
        }
        self.terminated = true;
        if let Ok(Some(status)) = self.child.try_wait() {
            process::signal_group(self.child.id(), libc::SIGKILL);
            self.join_drains();
            return Ok(status.into());
        }
        process::signal_group(self.child.id(), libc::SIGTERM);
        let outcome = match process::wait_until(&mut self.child, grace) {
            Ok(Some(status)) => {
                // reap any stragglers left in the group
                process::signal_group(self.child.id(), libc::SIGKILL);
                status.into()
            }
            _ => {
                process::kill_and_reap(&mut self.child);
                ExitOutcome::Killed
            }
        };
        self.join_drains();
        Ok(outcome)
    }

    fn join_drains(&mut self) {
        for h in self.drains.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for AppHandle {
    fn drop(&mut self) {
        if !self.terminated {
            process::kill_and_reap(&mut self.child);
            self.join_drains();
        }
    }
}
