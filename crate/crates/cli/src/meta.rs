//! `run.meta`: a `key=value` echo of every resolved option of a run.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

#[derive(Debug, Default)]
pub struct RunMeta {
    entries: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(command: &str, argv: &[String]) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("argv", argv.join(" "));
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes `run.meta` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("run.meta");
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Directory that receives `run.meta` for a command whose output is a file.
pub fn parent_dir(file: &Path) -> &Path {
    file.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."))
}
