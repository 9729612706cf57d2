use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_digest: String,
    pub status: StageStatus,
    pub inputs: Vec<String>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub started_us: u64,
    pub finished_us: Option<u64>,
    pub counters: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_us: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(run_id: String, created_us: u64) -> Self {
        RunManifest {
            run_id,
            created_us,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> io::Result<Option<Self>> {
        match fs::read(dir.join(MANIFEST_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", MANIFEST_FILE))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn store(&self, dir: &Path) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &bytes).map_err(|e| io::Error::other(e.to_string()))
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.stages.get(stage).is_some_and(|e| e.status == StageStatus::Complete)
    }

    /// Stage owning `output`, if any.
    pub fn owner_of(&self, output: &str) -> Option<&str> {
        self.stages
            .iter()
            .find(|(_, e)| e.outputs.iter().any(|o| o == output))
            .map(|(s, _)| s.as_str())
    }
}

/// Stable digest of `key=value` settings; order of insertion is irrelevant.
#[derive(Debug, Clone, Default)]
pub struct ConfigDigest {
    items: BTreeMap<String, String>,
}

impl ConfigDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.items.insert(key.to_string(), value.to_string());
        self
    }

    pub fn set_bytes(&mut self, key: &str, bytes: &[u8]) -> &mut Self {
        self.set(key, hex::encode(Sha256::digest(bytes)))
    }

    pub fn finish(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.items {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
