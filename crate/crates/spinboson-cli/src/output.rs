//! Run artifacts.  Every writer goes through a temp file in the target
//! directory followed by a rename, so an interrupted run never leaves a
//! half-written CSV or JSON behind.

use anyhow::Context;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// One sampled series: the mean column and its ensemble standard deviation.
/// Deterministic methods carry zero spread.
pub struct Column {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("bad output path {}", path.display()))?;
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Header `time,<label>,<label>_std,...`; floats through `Display`, which
/// round-trips f64 exactly.
pub fn write_csv(path: &Path, times: &[f64], columns: &[Column]) -> anyhow::Result<()> {
    let mut text = String::from("time");
    for c in columns {
        text += &format!(",{},{}_std", c.label, c.label);
    }
    text.push('\n');
    for (i, t) in times.iter().enumerate() {
        text += &format!("{t}");
        for c in columns {
            text += &format!(",{},{}", c.mean[i], c.std[i]);
        }
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}
