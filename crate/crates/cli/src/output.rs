use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;

use crate::Format;

/// Output directory restricted to a set of formats.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub formats: BTreeSet<Format>,
}

impl OutputDir {
    pub fn new(dir: PathBuf, formats: &[Format]) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let formats = if formats.is_empty() {
            [Format::Json, Format::Csv, Format::Svg, Format::Md].into_iter().collect()
        } else {
            formats.iter().copied().collect()
        };
        Ok(Self { dir, formats })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    /// Writes `name` if `format` is selected. Returns the path written.
    pub fn put(&self, name: &str, format: Format, bytes: &[u8]) -> anyhow::Result<Option<PathBuf>> {
        if !self.wants(format) {
            return Ok(None);
        }
        self.put_always(name, bytes).map(Some)
    }

    /// Writes `name` regardless of the format selection.
    pub fn put_always(&self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn put_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<Option<PathBuf>> {
        self.put(name, Format::Json, &to_json(value)?)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes to a temporary sibling, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

/// Runs a CSV writer into memory.
pub fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
