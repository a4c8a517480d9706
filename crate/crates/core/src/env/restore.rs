use std::fs;
use std::io;
use std::os::unix::fs::{symlink, PermissionsExt};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::paths;
use crate::task::ContextDataEntry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreReport {
    pub files_copied: u64,
    pub files_deleted: u64,
    pub bytes_written: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("path {0} escapes the permitted workspace")]
    Escape(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RestoreError + '_ {
    move |source| RestoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Makes each entry's target an exact mirror of its source: same bytes,
/// same modes, symlinks copied as links, extraneous target files deleted.
///
/// Targets are absolute paths interpreted under `workspace_root`; pass `/`
/// to restore onto the real filesystem. Running twice is a no-op the second
/// time (nothing copied, nothing deleted).
pub fn restore_context(
    entries: &[ContextDataEntry],
    suite_root: &Path,
    workspace_root: &Path,
) -> Result<RestoreReport, RestoreError> {
    let started = Instant::now();
    let mut report = RestoreReport::default();
    for entry in entries {
        let rel = paths::normalize_relative(&entry.from)
            .ok_or_else(|| RestoreError::Escape(entry.from.clone()))?;
        let src = suite_root.join(rel);
        let dst = paths::rebase_absolute(workspace_root, &entry.to)
            .ok_or_else(|| RestoreError::Escape(entry.to.clone()))?;
        if dst == workspace_root {
            return Err(RestoreError::Escape(entry.to.clone()));
        }
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        mirror(&src, &dst, &mut report)?;
    }
    report.duration_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

fn mirror(src: &Path, dst: &Path, report: &mut RestoreReport) -> Result<(), RestoreError> {
    let meta = fs::symlink_metadata(src).map_err(io_err(src))?;
    let ft = meta.file_type();
    if ft.is_symlink() {
        mirror_link(src, dst, report)
    } else if ft.is_dir() {
        mirror_dir(src, dst, &meta, report)
    } else {
        mirror_file(src, dst, &meta, report)
    }
}

fn existing(dst: &Path) -> Option<fs::Metadata> {
    fs::symlink_metadata(dst).ok()
}

fn mirror_link(src: &Path, dst: &Path, report: &mut RestoreReport) -> Result<(), RestoreError> {
    let target = fs::read_link(src).map_err(io_err(src))?;
    if let Some(m) = existing(dst) {
        if m.file_type().is_symlink() && fs::read_link(dst).ok().as_deref() == Some(target.as_path()) {
            return Ok(());
        }
        remove_any(dst, &m, report)?;
    }
    symlink(&target, dst).map_err(io_err(dst))?;
    report.files_copied += 1;
    Ok(())
}

fn mirror_file(
    src: &Path,
    dst: &Path,
    meta: &fs::Metadata,
    report: &mut RestoreReport,
) -> Result<(), RestoreError> {
    let mode = meta.permissions().mode() & 0o7777;
    let bytes = fs::read(src).map_err(io_err(src))?;
    if let Some(m) = existing(dst) {
        if m.file_type().is_file() {
            let same_mode = m.permissions().mode() & 0o7777 == mode;
            if m.len() == bytes.len() as u64 && fs::read(dst).ok().as_deref() == Some(&bytes[..]) {
                if !same_mode {
                    fs::set_permissions(dst, fs::Permissions::from_mode(mode)).map_err(io_err(dst))?;
                }
                return Ok(());
            }
        } else {
            remove_any(dst, &m, report)?;
        }
    }
    // write-then-rename so read-only targets can still be replaced
    let tmp = dst.with_file_name(format!(
        ".{}.restore-tmp",
        dst.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    fs::set_permissions(&tmp, fs::Permissions::from_mode(mode)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, dst).map_err(io_err(dst))?;
    report.files_copied += 1;
    report.bytes_written += bytes.len() as u64;
    Ok(())
}

fn mirror_dir(
    src: &Path,
    dst: &Path,
    meta: &fs::Metadata,
    report: &mut RestoreReport,
) -> Result<(), RestoreError> {
    let mode = meta.permissions().mode() & 0o7777;
    match existing(dst) {
        Some(m) if m.is_dir() => {}
        Some(m) => {
            remove_any(dst, &m, report)?;
            fs::create_dir(dst).map_err(io_err(dst))?;
        }
        None => fs::create_dir(dst).map_err(io_err(dst))?,
    }
    // keep the directory writable while its children are reconciled
    fs::set_permissions(dst, fs::Permissions::from_mode(mode | 0o700)).map_err(io_err(dst))?;

    let mut names: Vec<_> = fs::read_dir(src)
        .map_err(io_err(src))?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(io_err(src))?;
    names.sort();

    for entry in fs::read_dir(dst).map_err(io_err(dst))? {
        let entry = entry.map_err(io_err(dst))?;
        if names.binary_search(&entry.file_name()).is_err() {
            let path = entry.path();
            let m = fs::symlink_metadata(&path).map_err(io_err(&path))?;
            remove_any(&path, &m, report)?;
        }
    }
    for name in &names {
        mirror(&src.join(name), &dst.join(name), report)?;
    }
    fs::set_permissions(dst, fs::Permissions::from_mode(mode)).map_err(io_err(dst))?;
    Ok(())
}

fn remove_any(path: &Path, meta: &fs::Metadata, report: &mut RestoreReport) -> Result<(), RestoreError> {
    if meta.is_dir() {
        report.files_deleted += count_files(path);
        make_writable(path);
        fs::remove_dir_all(path).map_err(io_err(path))
    } else {
        report.files_deleted += 1;
        fs::remove_file(path).map_err(io_err(path))
    }
}

fn count_files(dir: &Path) -> u64 {
    let Ok(rd) = fs::read_dir(dir) else { return 0 };
    rd.filter_map(Result::ok)
        .map(|e| match e.file_type() {
            Ok(ft) if ft.is_dir() => count_files(&e.path()),
            _ => 1,
        })
        .sum()
}

fn make_writable(dir: &Path) {
    if let Ok(m) = fs::symlink_metadata(dir) {
        if m.is_dir() {
            let _ = fs::set_permissions(dir, fs::Permissions::from_mode(m.permissions().mode() | 0o700));
            if let Ok(rd) = fs::read_dir(dir) {
                for e in rd.filter_map(Result::ok) {
                    make_writable(&e.path());
                }
            }
        }
    }
}

/// Content hash of a tree: relative paths, entry kinds, permission bits,
/// file bytes and link targets, visited in sorted order.
pub fn tree_digest(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    digest_into(root, Path::new(""), &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

fn digest_into(path: &Path, rel: &Path, h: &mut Sha256) -> io::Result<()> {
    let meta = fs::symlink_metadata(path)?;
    let ft = meta.file_type();
    let mode = meta.permissions().mode() & 0o7777;
    h.update(rel.as_os_str().as_encoded_bytes());
    h.update([0]);
    if ft.is_symlink() {
        h.update(b"L");
        h.update(fs::read_link(path)?.as_os_str().as_encoded_bytes());
    } else if ft.is_dir() {
        h.update(b"D");
        h.update(mode.to_le_bytes());
        let mut names: Vec<_> = fs::read_dir(path)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
        names.sort();
        for name in names {
            digest_into(&path.join(&name), &rel.join(&name), h)?;
        }
    } else {
        h.update(b"F");
        h.update(mode.to_le_bytes());
        let bytes = fs::read(path)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update([0xff]);
    Ok(())
}
