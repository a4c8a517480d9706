//! Lexical path normalization used for sandbox confinement checks.

use std::path::{Component, Path, PathBuf};

/// Lexically normalizes `path`, resolving `.` and `..` without touching the
/// filesystem. Returns `None` if a `..` would climb above the path's start
/// (or above the root for absolute paths).
pub fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    let mut depth = 0usize;
    for comp in path.components() {
        match comp {
            Component::Prefix(p) => out.push(p.as_os_str()),
            Component::RootDir => out.push(Component::RootDir.as_os_str()),
            Component::CurDir => {}
            Component::ParentDir => {
                if depth == 0 {
                    return None;
                }
                out.pop();
                depth -= 1;
            }
            Component::Normal(s) => {
                out.push(s);
                depth += 1;
            }
        }
    }
    Some(out)
}

/// Normalizes a relative path and rejects absolute paths and escapes.
pub fn normalize_relative(path: &Path) -> Option<PathBuf> {
    if path.is_absolute() {
        return None;
    }
    normalize(path)
}

/// Maps an absolute "virtual" path onto `root`: `/a/b` under `/ws` becomes
/// `/ws/a/b`. With `root == "/"` the mapping is the identity.
pub fn rebase_absolute(root: &Path, virtual_path: &Path) -> Option<PathBuf> {
    if !virtual_path.is_absolute() {
        return None;
    }
    let norm = normalize(virtual_path)?;
    let rel = norm.strip_prefix("/").ok()?;
    Some(root.join(rel))
}

/// Resolves `candidate` against `base` and checks that the result stays
/// inside `base`. Absolute candidates must already lie inside `base`.
pub fn confine(base: &Path, candidate: &Path) -> Option<PathBuf> {
    let base = normalize(base)?;
    let joined = if candidate.is_absolute() {
        normalize(candidate)?
    } else {
        base.join(normalize_relative(candidate)?)
    };
    joined.starts_with(&base).then_some(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_handles_dots() {
        assert_eq!(normalize(Path::new("a/./b/../c")), Some(PathBuf::from("a/c")));
        assert_eq!(normalize(Path::new("/a/../b")), Some(PathBuf::from("/b")));
        assert_eq!(normalize(Path::new("../a")), None);
        assert_eq!(normalize(Path::new("/..")), None);
    }

    #[test]
    fn rebase_maps_under_root() {
        assert_eq!(
            rebase_absolute(Path::new("/ws"), Path::new("/root/.config/app")),
            Some(PathBuf::from("/ws/root/.config/app"))
        );
        assert_eq!(rebase_absolute(Path::new("/ws"), Path::new("rel")), None);
        assert_eq!(rebase_absolute(Path::new("/ws"), Path::new("/../etc")), None);
        assert_eq!(
            rebase_absolute(Path::new("/"), Path::new("/opt/x")),
            Some(PathBuf::from("/opt/x"))
        );
    }

    #[test]
    fn confine_rejects_escape() {
        let base = Path::new("/ws");
        assert_eq!(confine(base, Path::new("f.txt")), Some(PathBuf::from("/ws/f.txt")));
        assert_eq!(confine(base, Path::new("/ws/d/f")), Some(PathBuf::from("/ws/d/f")));
        assert_eq!(confine(base, Path::new("../f")), None);
        assert_eq!(confine(base, Path::new("/etc/passwd")), None);
        assert_eq!(confine(base, Path::new("/ws2/x")), None);
    }
}
