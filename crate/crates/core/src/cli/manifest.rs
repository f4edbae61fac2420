//! Run manifests: what ran, with which seeds, and a digest of every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputFile>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn versions() -> BTreeMap<String, String> {
    [
        ("kappa-lab", env!("CARGO_PKG_VERSION")),
        ("checkpoint-format", crate::checkpoint::FORMAT),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Collects written files into a run directory and seals them with a
/// manifest.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    started: u128,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: now_ms(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, recorded as an output.
    pub fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
        text.push('\n');
        self.write(rel, text)
    }

    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seeds: BTreeMap<String, u64>,
    ) -> Result<RunManifest> {
        let mut files = self.files;
        files.sort();
        files.dedup();
        let outputs = files
            .into_iter()
            .map(|rel| {
                let (sha256, bytes) = sha256_file(&self.root.join(&rel))?;
                Ok(OutputFile {
                    path: rel,
                    sha256,
                    bytes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seeds,
            versions: versions(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs,
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let p = self.root.join(MANIFEST_FILE);
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks that every listed output exists with the recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.outputs {
            let (sha, bytes) = sha256_file(&dir.join(&f.path))?;
            if sha != f.sha256 || bytes != f.bytes {
                return Err(Error::Contract(format!(
                    "{} does not match its digest",
                    f.path
                )));
            }
        }
        Ok(())
    }

    /// `path -> digest` for comparing runs.
    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.outputs
            .iter()
            .map(|f| (f.path.as_str(), f.sha256.as_str()))
            .collect()
    }
}
