//! Pipeline manifest: every CLI run records its effective config hash, seed,
//! and content hashes of its inputs, so re-running an identical step is a
//! no-op unless forced.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub config_hash: String,
    pub seed: u64,
    /// Input path -> content hash.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

/// Content-addressed hash in the git blob style: sha-256 over
/// `"blob <len>\0"` followed by the file bytes, hex-encoded.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hash_bytes(&bytes))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let body = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&body)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// True when the recorded entry matches `candidate` and all of its
    /// outputs still exist on disk.
    pub fn is_up_to_date(&self, key: &str, candidate: &ManifestEntry) -> bool {
        match self.entries.get(key) {
            Some(existing) => {
                existing == candidate && candidate.outputs.iter().all(|o| Path::new(o).exists())
            }
            None => false,
        }
    }

    pub fn record(&mut self, key: &str, entry: ManifestEntry) {
        self.entries.insert(key.to_string(), entry);
    }
}

/// Build the entry for a run: hash the serialized effective config and every
/// input file.
pub fn entry_for(
    config_json: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<ManifestEntry> {
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), content_hash(p)?);
    }
    Ok(ManifestEntry {
        config_hash: hash_bytes(config_json.as_bytes()),
        seed,
        input_hashes,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    })
}
