use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const MANIFEST_DIR: &str = "manifests";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one completed stage. Paths are relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    /// Hash of the configuration sections the stage depends on.
    pub config_sha256: String,
    pub depends_on: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn read_manifest(out: &Path, stage: &str) -> Result<Option<Manifest>> {
    let p = manifest_path(out, stage);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&std::fs::read(p)?)?))
}

fn hash_file(path: &Path) -> Result<Option<String>> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(sha256_hex(&b))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Bookkeeping for one running stage: every read must come from a declared
/// dependency, every write is atomic and hashed, and the manifest is
/// written last so its presence marks completion.
pub struct StageRun {
    out: PathBuf,
    stage: String,
    seed: u64,
    config_sha256: String,
    deps: BTreeMap<String, Manifest>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl StageRun {
    /// Starts `stage`, dropping any previous manifest of it.
    pub fn begin(out: &Path, stage: &str, seed: u64, config_sha256: String) -> Result<Self> {
        let old = manifest_path(out, stage);
        if old.exists() {
            std::fs::remove_file(old)?;
        }
        Ok(Self {
            out: out.to_path_buf(),
            stage: stage.to_string(),
            seed,
            config_sha256,
            deps: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    fn missing(&self, needed: &str) -> Error {
        Error::Dependency {
            stage: self.stage.clone(),
            needed: needed.to_string(),
        }
    }

    /// Loads the manifest of `needed` and checks that it is current: same
    /// configuration hash and unchanged inputs and outputs on disk.
    pub fn require(&mut self, needed: &str, expected_config: &str) -> Result<Manifest> {
        let m = read_manifest(&self.out, needed)?.ok_or_else(|| self.missing(needed))?;
        if m.config_sha256 != expected_config {
            return Err(self.missing(needed));
        }
        for (rel, h) in m.inputs.iter().chain(&m.outputs) {
            if hash_file(&self.out.join(rel))?.as_deref() != Some(h.as_str()) {
                return Err(self.missing(needed));
            }
        }
        self.deps.insert(needed.to_string(), m.clone());
        Ok(m)
    }

    /// Whether `needed` has a current manifest.
    pub fn available(&self, needed: &str, expected_config: &str) -> Result<bool> {
        let Some(m) = read_manifest(&self.out, needed)? else {
            return Ok(false);
        };
        if m.config_sha256 != expected_config {
            return Ok(false);
        }
        for (rel, h) in m.inputs.iter().chain(&m.outputs) {
            if hash_file(&self.out.join(rel))?.as_deref() != Some(h.as_str()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn declared(&self, rel: &str) -> Option<&String> {
        self.deps.values().find_map(|m| m.outputs.get(rel))
    }

    /// Reads an artifact produced by a required stage.
    pub fn read(&mut self, rel: &str) -> Result<Vec<u8>> {
        let declared = self.declared(rel).cloned().ok_or_else(|| {
            Error::Contract(format!(
                "stage `{}` reads undeclared artifact {rel}",
                self.stage
            ))
        })?;
        let bytes = std::fs::read(self.out.join(rel))?;
        let h = sha256_hex(&bytes);
        if h != declared {
            return Err(Error::Contract(format!(
                "{rel} changed while `{}` was running",
                self.stage
            )));
        }
        self.inputs.insert(rel.to_string(), h);
        Ok(bytes)
    }

    /// Marks an on-disk artifact of a required stage as read, for loaders
    /// that take a path.
    pub fn read_path(&mut self, rel: &str) -> Result<PathBuf> {
        self.read(rel)?;
        Ok(self.out.join(rel))
    }

    /// Names of the required stages starting with `prefix`.
    pub fn listed_stages(&self, prefix: &str) -> Vec<String> {
        self.deps
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records a file already written atomically by a module writer.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let h = hash_file(&self.out.join(rel))?
            .ok_or_else(|| Error::Contract(format!("{rel} was not written")))?;
        self.outputs.insert(rel.to_string(), h);
        Ok(())
    }

    pub fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            stage: self.stage,
            seed: self.seed,
            config_sha256: self.config_sha256,
            depends_on: self.deps.into_keys().collect(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        write_atomic(
            &manifest_path(&self.out, &m.stage),
            &serde_json::to_vec_pretty(&m)?,
        )?;
        Ok(m)
    }
}
