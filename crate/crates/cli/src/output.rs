//! Atomic artifact writing: everything goes to a temp path first and is
//! renamed on success, so failures never leave partial outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::errors::{runtime, CliError, CliResult};

pub struct OutputSet {
    staged: Vec<(PathBuf, PathBuf)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self { staged: Vec::new() }
    }

    /// Stages content for `path`; nothing is visible until `commit`.
    pub fn stage(&mut self, path: &Path, content: &str) -> CliResult<()> {
        let tmp = tmp_path(path);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
            }
        }
        fs::write(&tmp, content)
            .map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(mut self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (tmp, path) in self.staged.drain(..) {
            fs::rename(&tmp, &path)
                .map_err(|e| runtime(format!("cannot finalize {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".to_string());
    name.push_str(".partial");
    path.with_file_name(name)
}

/// Serializes with a trailing newline; all numbers are checked finite first
/// so a report can never smuggle NaN through JSON.
pub fn to_json_string(value: &serde_json::Value) -> CliResult<String> {
    check_finite(value)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("serialization failure: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn check_finite(value: &serde_json::Value) -> CliResult<()> {
    match value {
        serde_json::Value::Number(n) => {
            if n.as_f64().map(|v| v.is_finite()) == Some(false) {
                return Err(runtime("non-finite number in report"));
            }
            Ok(())
        }
        serde_json::Value::Array(items) => items.iter().try_for_each(check_finite),
        serde_json::Value::Object(map) => map.values().try_for_each(check_finite),
        _ => Ok(()),
    }
}

/// Machine-readable error envelope printed to stderr on failure.
pub fn error_json(err: &CliError) -> String {
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        }
    })
    .to_string()
}
