use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Record of one command run, written next to its main output.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: Option<u64>,
    /// Wall-clock seconds spent inside model fitting only.
    pub fit_seconds: Option<f64>,
    pub outputs: Vec<String>,
    pub version: &'static str,
}

/// `<output>.<suffix>`, keeping the full original file name.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

pub fn manifest_path(output: &Path) -> PathBuf {
    sibling(output, "manifest.json")
}

impl<C: Serialize> RunManifest<'_, C> {
    pub fn write(&self, main_output: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(main_output);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn display(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
