//! `manifest.json`: what each stage produced, with checksums, so completed
//! stages can be skipped on re-runs.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_str(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// A file written by a stage, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "message")]
pub enum StageStatus {
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of the config and the checksums of the stage's inputs.
    pub key: String,
    pub status: StageStatus,
    pub outputs: Vec<Artifact>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    /// In execution order.
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: impl Into<String>) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            stages: Vec::new(),
        }
    }

    /// The manifest in `out`, or a fresh one if there is none.
    pub fn open(out: &Path, config_hash: &str) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            log::warn!("ignoring manifest format {}", manifest.format_version);
            return Ok(Self::new(config_hash));
        }
        manifest.config_hash = config_hash.into();
        Ok(manifest)
    }

    /// Atomically replaces `out/manifest.json`.
    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        let tmp = out.join(".manifest.json.tmp");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, json + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// True if `name` completed under `key` and all its outputs still match
    /// their recorded checksums.
    pub fn is_fresh(&self, out: &Path, name: &str, key: &str) -> bool {
        let Some(record) = self.stage(name) else {
            return false;
        };
        record.key == key
            && record.status == StageStatus::Complete
            && record
                .outputs
                .iter()
                .all(|a| sha256_file(out.join(&a.path)).is_ok_and(|h| h == a.sha256))
    }

    /// Inserts or replaces the record of `record.name`.
    pub fn record(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// Checksum of an output recorded by any completed stage.
    pub fn checksum_of(&self, rel: &Path) -> Option<&str> {
        self.stages
            .iter()
            .filter(|s| s.status == StageStatus::Complete)
            .flat_map(|s| &s.outputs)
            .find(|a| a.path == rel)
            .map(|a| a.sha256.as_str())
    }
}
