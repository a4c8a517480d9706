use std::collections::BTreeMap;
use std::path::Path;

/// `${NAME}` placeholders expanded in launch argv, env values, working
/// directories and state-query targets.
///
/// The orchestrator always defines `WORKSPACE` (the attempt's sandbox root)
/// and `SUITE_ROOT`; `EXE_DIR` defaults to the directory of the running
/// executable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vars(BTreeMap<String, String>);

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.0.insert(name.into(), value.into());
        self
    }

    pub fn set_path(&mut self, name: impl Into<String>, value: &Path) -> &mut Self {
        self.set(name, value.to_string_lossy().into_owned())
    }

    /// Copies every entry of `other` over this set.
    pub fn merge(&mut self, other: &Vars) -> &mut Self {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    /// Fills in any of the standard names that are still unset.
    pub fn with_defaults(mut self) -> Self {
        if !self.0.contains_key("EXE_DIR") {
            if let Some(dir) = std::env::current_exe().ok().and_then(|p| p.parent().map(Path::to_path_buf)) {
                self.set_path("EXE_DIR", &dir);
            }
        }
        self
    }

    /// Replaces every known `${NAME}`; unknown placeholders are left as-is.
    pub fn expand(&self, input: &str) -> String {
        let mut out = String::with_capacity(input.len());
        let mut rest = input;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find('}') {
                Some(end) => {
                    let name = &after[..end];
                    match self.0.get(name) {
                        Some(v) => out.push_str(v),
                        None => {
                            out.push_str("${");
                            out.push_str(name);
                            out.push('}');
                        }
                    }
                    rest = &after[end + 1..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }

    pub fn expand_all(&self, items: &[String]) -> Vec<String> {
        items.iter().map(|s| self.expand(s)).collect()
    }
}
