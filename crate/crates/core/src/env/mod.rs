//! Environment management: context restore, app lifecycle, bind mounts.

mod launch;
mod restore;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use launch::{launch_app, AppHandle, EnvError, ExitOutcome, LaunchOptions};
pub use restore::{restore_context, tree_digest, RestoreError, RestoreReport};

use crate::tools::GuiManifest;

/// Default environment variable carrying the probe sink endpoint.
pub const DEFAULT_PROBE_ENV_VAR: &str = "MCPWORLD_PROBE_ENDPOINT";
/// Default readiness window: the app must still be alive after this long.
pub const DEFAULT_READINESS_MS: u64 = 500;

fn default_probe_env_var() -> String {
    DEFAULT_PROBE_ENV_VAR.to_owned()
}

fn is_default_probe_env_var(v: &str) -> bool {
    v == DEFAULT_PROBE_ENV_VAR
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindMount {
    pub source: PathBuf,
    pub target: PathBuf,
}

/// How to launch the application under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub name: String,
    #[serde(default)]
    pub argv: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bind_mounts: Vec<BindMount>,
    #[serde(
        default = "default_probe_env_var",
        skip_serializing_if = "is_default_probe_env_var"
    )]
    pub probe_endpoint_env_var: String,
    /// Overrides [`DEFAULT_READINESS_MS`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readiness_ms: Option<u64>,
    /// Probe event that gates the attempt's start (app-level readiness).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ready_event: Option<String>,
    /// Widget layout for the simulated screen used by GUI modalities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gui: Option<GuiManifest>,
}

impl AppSpec {
    pub fn readiness_ms(&self) -> u64 {
        self.readiness_ms.unwrap_or(DEFAULT_READINESS_MS)
    }

    /// Fills unset fields from a catalog entry; values set here win.
    pub fn apply_defaults(&mut self, defaults: &AppSpec) {
        if self.argv.is_empty() {
            self.argv = defaults.argv.clone();
        }
        for (k, v) in &defaults.env {
            self.env.entry(k.clone()).or_insert_with(|| v.clone());
        }
        if self.working_dir.is_none() {
            self.working_dir = defaults.working_dir.clone();
        }
        if self.bind_mounts.is_empty() {
            self.bind_mounts = defaults.bind_mounts.clone();
        }
        if is_default_probe_env_var(&self.probe_endpoint_env_var) {
            self.probe_endpoint_env_var = defaults.probe_endpoint_env_var.clone();
        }
        self.readiness_ms = self.readiness_ms.or(defaults.readiness_ms);
        if self.ready_event.is_none() {
            self.ready_event = defaults.ready_event.clone();
        }
        if self.gui.is_none() {
            self.gui = defaults.gui.clone();
        }
    }
}

/// Renders each bind mount in the container-tooling mount syntax.
pub fn resolve_bind_declarations(spec: &AppSpec) -> Vec<String> {
    spec.bind_mounts
        .iter()
        .map(|m| {
            format!(
                "source={},target={},type=bind",
                m.source.display(),
                m.target.display()
            )
        })
        .collect()
}
