//! Run manifests: every subcommand records what it read and wrote (with
//! content hashes) plus the configuration hash and seed, so a run can be
//! audited and reproduced. Manifests contain no timestamps — a rerun with the
//! same config and seed is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

/// Records reads and writes under one output directory and turns them into a
/// [`Manifest`]. All stage file IO goes through this type.
pub struct Tracker {
    root: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

impl Tracker {
    pub fn new(root: &Path) -> Tracker {
        Tracker {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Read a file as an input artifact.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(self.rel(path), digest(&bytes));
        Ok(bytes)
    }

    /// Write a file as an output artifact, creating parent directories.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", dir.display())))?;
        }
        fs::write(path, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.insert(self.rel(path), digest(bytes));
        Ok(())
    }

    /// Fold another tracker's records into this one (used by `run-all`).
    pub fn absorb(&mut self, other: Tracker) {
        self.inputs.extend(other.inputs);
        self.outputs.extend(other.outputs);
    }

    pub fn to_manifest(&self, command: &str, seed: u64, config_sha256: &str) -> Manifest {
        let entry = |(path, sha256): (&String, &String)| ManifestEntry {
            path: path.clone(),
            sha256: sha256.clone(),
        };
        Manifest {
            schema_version: MANIFEST_SCHEMA,
            command: command.to_string(),
            seed,
            config_sha256: config_sha256.to_string(),
            inputs: self.inputs.iter().map(entry).collect(),
            outputs: self.outputs.iter().map(entry).collect(),
        }
    }
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialization");
        s.push('\n');
        s
    }

    /// Write `<command>.manifest.json` under `root` and return its path.
    pub fn save(&self, root: &Path) -> Result<PathBuf, CliError> {
        let path = root.join(format!("{}.manifest.json", self.command));
        fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("mkdir {}: {e}", root.display())))?;
        fs::write(&path, self.to_json())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
