use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Suffix of manifest files; the command name is the stem.
pub const MANIFEST_SUFFIX: &str = ".manifest.json";

pub fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}{MANIFEST_SUFFIX}"))
}

/// Record of one command invocation: what went in, what came out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the resolved config bytes.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Collects artifacts while a command runs.
#[derive(Debug)]
pub struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    pub fn start(command: &str, config: &[u8], seed: Option<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                version: version(),
                config_hash: sha256_hex(config),
                seed,
                inputs: Vec::new(),
                artifacts: Vec::new(),
                started_at: now(),
                finished_at: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn artifact(&mut self, path: &Path) {
        if !self.manifest.artifacts.iter().any(|p| p == path) {
            self.manifest.artifacts.push(path.to_path_buf());
        }
    }

    /// Lists every regular file under `dir` not yet recorded, in name order.
    pub fn artifacts_in(&mut self, dir: &Path) -> Result<()> {
        let mut names: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && !p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
            .collect();
        names.sort();
        for p in names {
            self.artifact(&p);
        }
        Ok(())
    }

    /// Writes `<command>.manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.manifest.finished_at = now();
        let path = manifest_path(dir, &self.manifest.command);
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
