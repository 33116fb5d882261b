//! Output directories and the manifest every run leaves in them.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Resolved configuration and inputs of the run.
    pub config: serde_json::Value,
    /// Files written by the run, relative to `out_dir`.
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// An output directory claimed for one run.
pub struct OutDir {
    pub path: PathBuf,
    command: String,
    started: u64,
    artifacts: Vec<String>,
}

impl OutDir {
    /// Creates `path`; refuses a non-empty directory unless `overwrite`.
    pub fn claim(path: &Path, command: &str, overwrite: bool) -> Result<Self> {
        if path.exists() {
            let occupied = std::fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .next()
                .is_some();
            if occupied && !overwrite {
                bail!(
                    "output directory {} is not empty; pass --overwrite to replace its contents",
                    path.display()
                );
            }
        }
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            command: command.to_string(),
            started: now(),
            artifacts: Vec::new(),
        })
    }

    /// Path of an artifact inside the directory, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.file(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Checks every recorded artifact exists, then writes the manifest.
    pub fn finish(self, seed: Option<u64>, config: serde_json::Value) -> Result<RunManifest> {
        for a in &self.artifacts {
            let p = self.path.join(a);
            if !p.exists() {
                bail!("artifact {} was not written", p.display());
            }
        }
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            out_dir: self.path.clone(),
            config,
            artifacts: self.artifacts,
            started_unix: self.started,
            finished_unix: now(),
        };
        let path = self.path.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_occupied_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "1").unwrap();
        assert!(OutDir::claim(dir.path(), "t", false).is_err());
        assert!(OutDir::claim(dir.path(), "t", true).is_ok());
    }

    #[test]
    fn missing_artifact_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::claim(&dir.path().join("run"), "t", false).unwrap();
        out.file("never.json");
        assert!(out.finish(None, serde_json::Value::Null).is_err());
    }

    #[test]
    fn manifest_lists_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::claim(dir.path(), "t", false).unwrap();
        out.write_text("a.txt", "hi").unwrap();
        let m = out.finish(Some(3), serde_json::json!({"k": 1})).unwrap();
        assert_eq!(m.artifacts, vec!["a.txt"]);
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
